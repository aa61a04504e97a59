from typing import Any, Dict, Iterable, Type

from hyprl.errors import UsageError
from hyprl.schemas import MetaDataset
from hyprl.tuner import Tuner
from hyprl.tuners.policy import HypRLTuner
from hyprl.tuners.randomsearch import RandomSearchTuner
from hyprl.tuners.smbo import IGpTuner, SpearmintTuner

ALL_TUNERS_CLS = [
    RandomSearchTuner,
    IGpTuner,
    SpearmintTuner,
    HypRLTuner,
]

TUNERS_BY_METHOD: Dict[str, Type[Tuner]] = {cls.method: cls for cls in ALL_TUNERS_CLS}


def get_tuner_cls(method: str) -> Type[Tuner]:
    try:
        return TUNERS_BY_METHOD[method.strip().lower()]
    except KeyError:
        raise UsageError(
            f"unknown method {method!r}, choose from {', '.join(TUNERS_BY_METHOD)}"
        ) from None


def gen_tuners(methods: Iterable[str], md: MetaDataset, **kwargs: Any):
    return (get_tuner_cls(method)(md, **kwargs) for method in methods)
