"""Greenhouse twin: micro-climate sim, patrol bot, virtual-pin broker, rule controller.

The package is organized the way the system is deployed:

- :mod:`agribot.microclimate` -- discrete-time physics of the zoned greenhouse
- :mod:`agribot.devices` -- sensor/actuator transfer functions (ADCs, relay, H-bridge, battery)
- :mod:`agribot.bot` -- the patrolling robot: navigation FSM, sampling, drive pins
- :mod:`agribot.protocol` -- the newline-delimited JSON frame grammar
- :mod:`agribot.broker` -- token-scoped frame router with TCP and WebSocket transports
- :mod:`agribot.controller` -- threshold rules with hysteresis plus the stale-data watchdog
- :mod:`agribot.config` -- scenario configuration loading and validation
- :mod:`agribot.harness` -- deterministic scenario runner (in-process or networked) and log export
- :mod:`agribot.report` -- matplotlib figures rendered from run logs
"""

from agribot.config import ConfigError, ScenarioConfig, load_config
from agribot.harness import RunLog, export_log, run_scenario
from agribot.protocol import Frame, ProtocolError, encode_frame, parse_frame

__all__ = [
    "ConfigError",
    "Frame",
    "ProtocolError",
    "RunLog",
    "ScenarioConfig",
    "encode_frame",
    "export_log",
    "load_config",
    "parse_frame",
    "run_scenario",
]

__version__ = "0.1.0"
