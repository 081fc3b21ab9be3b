"""Configuration management for aitfsim."""

import copy
import os
import sys
import yaml
from typing import Dict, Any, Optional


class Config:
    """Settings manager for aitfsim.

    Settings provide the defaults a scenario falls back to; anything a
    scenario file declares wins over them.
    """

    DEFAULT_CONFIG = {
        "protocol": {
            "T": "60s",  # Filter lifetime at the attacker's gateway and shadow retention
            "T_tmp": "600ms",  # Temporary filter lifetime at the victim's gateway
            "grace_attacker": "200ms",  # Attacker must stop within this
            "grace_victim_gw": "500ms",  # Quiet window before temp-filter expiry
            "handshake_timeout": "1000ms",
            "disconnect_duration": None  # None = rest of run
        },
        "contracts": {
            "r1": 100,  # Requests/s a provider accepts from a client
            "r2": 1,  # Requests/s a provider may send to a client
            "burst1": None,  # None = one second of tokens
            "burst2": None
        },
        "tables": {
            "filter_capacity": 10000,  # Wire-speed filters per border router
            "shadow_capacity": 100000  # Logged requests per border router
        },
        "simulation": {
            "seed": 1,
            "duration": "60s",
            "audit": False  # Re-check every forwarded packet against the filter table
        },
        "report": {
            "format": "text",  # text, json, csv
            "burst_gap_packets": 3  # Gap (in packet intervals) separating delivered bursts
        },
        "logging": {
            "level": "WARNING",
            "file": "",  # Empty = console only
            "max_size": 10485760,  # 10MB
            "backup_count": 5
        }
    }

    def __init__(self, config_path: Optional[str] = None):
        """Initialize configuration.

        Args:
            config_path: Path to YAML settings file
        """
        self.config_path = config_path or self._get_default_config_path()
        self._config = copy.deepcopy(self.DEFAULT_CONFIG)
        self._load_config()

    def _get_default_config_path(self) -> str:
        """Get default configuration file path."""
        env_path = os.environ.get("AITFSIM_CONFIG")
        if env_path and os.path.exists(env_path):
            return env_path

        paths = [
            "./config/config.yaml",
            os.path.expanduser("~/.aitfsim/config.yaml"),
            "/etc/aitfsim/config.yaml",
        ]
        for path in paths:
            if os.path.exists(path):
                return path
        return paths[0]

    def _load_config(self) -> None:
        """Load configuration from YAML file."""
        if os.path.exists(self.config_path):
            try:
                with open(self.config_path, 'r') as f:
                    user_config = yaml.safe_load(f) or {}
                if not isinstance(user_config, dict):
                    raise ConfigError(f"top level of {self.config_path} must be a mapping")
                self._merge_config(self._config, user_config)
            except (OSError, yaml.YAMLError, ConfigError) as e:
                print(f"Warning: Failed to load config from {self.config_path}: {e}", file=sys.stderr)

    def _merge_config(self, base: Dict[str, Any], update: Dict[str, Any]) -> None:
        """Recursively merge configuration dictionaries."""
        for key, value in update.items():
            if key in base and isinstance(base[key], dict) and isinstance(value, dict):
                self._merge_config(base[key], value)
            else:
                base[key] = value

    def get(self, key_path: str, default: Any = None) -> Any:
        """Get configuration value by dot-separated key path.

        Args:
            key_path: Dot-separated path (e.g., 'protocol.T')
            default: Default value if key not found

        Returns:
            Configuration value
        """
        keys = key_path.split('.')
        value = self._config

        try:
            for key in keys:
                value = value[key]
            return value
        except (KeyError, TypeError):
            return default

    def set(self, key_path: str, value: Any) -> None:
        """Set configuration value by dot-separated key path.

        Args:
            key_path: Dot-separated path (e.g., 'simulation.seed')
            value: Value to set
        """
        keys = key_path.split('.')
        config = self._config

        for key in keys[:-1]:
            if key not in config:
                config[key] = {}
            config = config[key]

        config[keys[-1]] = value

    def section(self, name: str) -> Dict[str, Any]:
        """Copy of one top-level section."""
        return copy.deepcopy(self._config.get(name, {}))

    @property
    def protocol_defaults(self) -> Dict[str, Any]:
        """Protocol timer defaults (T, T_tmp, grace periods...)."""
        return self.section('protocol')

    @property
    def contract_defaults(self) -> Dict[str, Any]:
        """Contract rates applied to adjacencies without an explicit contract."""
        return self.section('contracts')

    @property
    def filter_capacity(self) -> int:
        """Default wire-speed filter table size."""
        return int(self.get('tables.filter_capacity', 10000))

    @property
    def shadow_capacity(self) -> int:
        """Default shadow log size."""
        return int(self.get('tables.shadow_capacity', 100000))

    @property
    def default_seed(self) -> int:
        return int(self.get('simulation.seed', 1))

    @property
    def default_duration(self) -> Any:
        return self.get('simulation.duration', '60s')

    @property
    def audit(self) -> bool:
        """Whether forwarded packets are audited against filter tables."""
        return bool(self.get('simulation.audit', False))

    @property
    def report_format(self) -> str:
        return self.get('report.format', 'text')

    @property
    def burst_gap_packets(self) -> int:
        return int(self.get('report.burst_gap_packets', 3))

    @property
    def log_level(self) -> str:
        """Get log level."""
        return self.get('logging.level')

    @property
    def log_file(self) -> str:
        """Get log file path."""
        return self.get('logging.file')

    @property
    def log_max_size(self) -> int:
        """Get maximum log file size."""
        return self.get('logging.max_size')

    @property
    def log_backup_count(self) -> int:
        """Get log backup count."""
        return self.get('logging.backup_count')


class ConfigError(Exception):
    """Malformed settings file."""
    pass
