"""Packet-level VANET simulator: AODV/DSR over 802.11p/802.11a DCF."""

from .engine import RngStream, Simulator, format_time, seconds
from .metrics import MetricsReport, analyze_file, analyze_text, compare_matrix, compute_metrics, read_trace
from .mobility import HighwayParams, MobilityScript, generate_highway, parse_mobility_script
from .netsim import ConfigError, FlowSpec, ScenarioConfig, Simulation, build_scenario, cbr_send_times, load_config
from .radio import PhyName, builtin_profile, frame_airtime

__version__ = "0.1.0"
