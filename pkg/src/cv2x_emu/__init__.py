"""Real-time C-V2X mode 4 sidelink emulator: SB-SPS MAC, abstracted PHY, metrics and a UDP gateway."""
from .channel import ChannelModelConfig, FowlervilleParams, WinnerB1Params
from .engine import EmittedBsm, Engine, run
from .grid import ConfigError, Csr, SelectionWindow, SimParams
from .metrics import MetricsReport
from .mobility import ScenarioSpec, generate_linear_scenario, load_trace_csv

__version__ = "0.1.0"
