from .formats import (  # noqa: F401
    dump_candidate,
    dump_market,
    load_candidate,
    load_diffusion,
    load_market,
    parse_candidate,
    parse_diffusion,
    parse_market,
)
from .report import RunReport  # noqa: F401
