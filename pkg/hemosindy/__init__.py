from importlib import metadata

from hemosindy import (
    classify,
    config,
    errors,
    library,
    models,
    signal,
    sim,
    stls,
    synth,
)
from hemosindy.errors import HemosindyError
from hemosindy.models import (
    LibrarySpec,
    LinearParams,
    SignalPair,
    SparseModel,
    TimeSeries,
)

version = metadata.version('hemosindy')

__all__ = [
    'HemosindyError',
    'LibrarySpec',
    'LinearParams',
    'SignalPair',
    'SparseModel',
    'TimeSeries',
    'classify',
    'config',
    'errors',
    'library',
    'models',
    'signal',
    'sim',
    'stls',
    'synth',
    'version',
]
