"""Message-passing concurrent data structures on a simulated many-core machine."""

from .simcore import (ROUND_ROBIN, RANDOM_FAIR, Sim, SchedulerConfig, Topology,
                      ConfigError, SimFault)
from .verify import check_linearizable, SPECS

__all__ = ["ROUND_ROBIN", "RANDOM_FAIR", "Sim", "SchedulerConfig", "Topology",
           "ConfigError", "SimFault", "check_linearizable", "SPECS"]
__version__ = "0.1.0"
