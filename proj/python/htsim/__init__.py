from ._htsim import *  # noqa: F401,F403
from ._htsim import __doc__  # noqa: F401
