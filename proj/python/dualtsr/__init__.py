from _dualtsr import *  # noqa: F401,F403
from _dualtsr import __doc__  # noqa: F401
