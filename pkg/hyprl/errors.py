class HypRLError(Exception):
    pass


class MetaDatasetError(HypRLError, ValueError):
    pass


class GridError(HypRLError, ValueError):
    pass


class EpisodeError(HypRLError, ValueError):
    pass


class ShapeError(HypRLError, ValueError):
    pass


class GpError(HypRLError):
    pass


class ReportError(HypRLError, ValueError):
    pass


class UsageError(HypRLError):
    # command line misuse, exit code 2
    pass


class ConfigError(HypRLError, ValueError):
    # invalid configuration values, reported as usage errors by the CLI
    pass
