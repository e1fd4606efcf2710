from ._moie import *  # noqa: F401,F403
