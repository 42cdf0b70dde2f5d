import os
import json
import logging
from dataclasses import asdict, fields
from typing import Any, Dict, List, Optional

from .domain_dinner import CSI_BUDGET as DINNER_CSI_BUDGET, DinnerConfig
from .domain_gridworld import CSI_BUDGET as GRIDWORLD_CSI_BUDGET, GridworldConfig
from .planners import PLANNER_ALIASES
from .selector import DEFAULT_LAMBDAS

logger = logging.getLogger(__name__)

CONFIG_CLASSES = {"gridworld": GridworldConfig, "dinner": DinnerConfig}


class DomainConfigManager:
    """
    Manages the per-domain configuration file: domain parameters, CSI budgets,
    the context-variable whitelist and per-planner lambda values.
    """
    CONFIG_FILENAME = "domain_config.json"
    SECTION_KEYS = ("config", "csi", "context_variables", "lambdas")

    def __init__(self, config_path: Optional[str] = None):
        self._config_path = config_path or self._get_config_path()
        self._config = self._load_config()
        logger.info(f"Domain config manager initialized from {self._config_path}: "
                    f"{len(self._config)} domains")

    def _get_config_path(self) -> str:
        return os.path.join(os.path.dirname(os.path.abspath(__file__)), self.CONFIG_FILENAME)

    def _load_config(self) -> Dict[str, Any]:
        """Loads the file, creating the default document when it is missing."""
        if not os.path.exists(self._config_path):
            logger.warning(f"Domain config file not found: {self._config_path}, creating defaults")
            return self._create_default_config()

        try:
            with open(self._config_path, 'r', encoding='utf-8') as f:
                config = json.load(f)
            self._validate_config(config)
            return config
        except Exception as e:
            logger.error(f"Failed to load domain config: {e}", exc_info=True)
            return self._default_document()

    def _save_config(self) -> bool:
        try:
            if os.path.exists(self._config_path):
                backup_path = f"{self._config_path}.bak"
                try:
                    with open(self._config_path, 'r', encoding='utf-8') as src, \
                            open(backup_path, 'w', encoding='utf-8') as dst:
                        dst.write(src.read())
                except Exception as e:
                    logger.warning(f"Could not back up domain config: {e}")

            with open(self._config_path, 'w', encoding='utf-8') as f:
                json.dump(self._config, f, ensure_ascii=False, indent=4)
            logger.info(f"Domain config saved to {self._config_path}")
            return True
        except Exception as e:
            logger.error(f"Failed to save domain config: {e}", exc_info=True)
            return False

    def _validate_config(self, config: Dict[str, Any]) -> bool:
        if not isinstance(config, dict):
            raise TypeError("domain config must be a JSON object")
        for domain, section in config.items():
            if domain not in CONFIG_CLASSES:
                raise ValueError(f"unknown domain in config: {domain}")
            for key in self.SECTION_KEYS:
                if key not in section:
                    raise ValueError(f"domain {domain} is missing key: {key}")
            if not isinstance(section['config'], dict):
                raise TypeError(f"{domain}.config must be an object")
            allowed = {f.name for f in fields(CONFIG_CLASSES[domain])}
            unknown = set(section['config']) - allowed
            if unknown:
                raise ValueError(f"{domain}.config has unknown fields: {sorted(unknown)}")
            # construction runs the dataclass's own range checks
            CONFIG_CLASSES[domain](**section['config'])
            csi = section['csi']
            if not isinstance(csi, dict) or not isinstance(csi.get('k1'), int) or not isinstance(csi.get('k2'), int):
                raise TypeError(f"{domain}.csi must hold integer k1 and k2")
            if csi['k1'] < 1 or csi['k2'] < 1:
                raise ValueError(f"{domain}.csi budgets must be positive")
            if not isinstance(section['context_variables'], list):
                raise TypeError(f"{domain}.context_variables must be a list")
            lambdas = section['lambdas']
            if not isinstance(lambdas, dict):
                raise TypeError(f"{domain}.lambdas must be an object")
            for planner, lam in lambdas.items():
                if planner not in PLANNER_ALIASES:
                    raise ValueError(f"{domain}.lambdas has unknown planner: {planner}")
                if not isinstance(lam, (int, float)) or lam < 0:
                    raise ValueError(f"{domain}.lambdas[{planner}] must be a non-negative number")
        return True

    def _default_document(self) -> Dict[str, Any]:
        return {
            "gridworld": {
                "config": asdict(GridworldConfig()),
                "csi": {"k1": GRIDWORLD_CSI_BUDGET[0], "k2": GRIDWORLD_CSI_BUDGET[1], "mode": None},
                "context_variables": ["agent_room"],
                "lambdas": dict(DEFAULT_LAMBDAS),
            },
            "dinner": {
                "config": {**asdict(DinnerConfig()), "rewards": list(DinnerConfig().rewards)},
                "csi": {"k1": DINNER_CSI_BUDGET[0], "k2": DINNER_CSI_BUDGET[1], "mode": None},
                "context_variables": ["location"],
                "lambdas": dict(DEFAULT_LAMBDAS),
            },
        }

    def _create_default_config(self) -> Dict[str, Any]:
        default_config = self._default_document()
        try:
            with open(self._config_path, 'w', encoding='utf-8') as f:
                json.dump(default_config, f, ensure_ascii=False, indent=4)
            logger.info(f"Default domain config written to {self._config_path}")
        except Exception as e:
            logger.error(f"Failed to write default domain config: {e}", exc_info=True)
        return default_config

    def _section(self, domain: str) -> Dict[str, Any]:
        if domain not in self._config:
            raise ValueError(f"unknown domain: {domain}")
        return self._config[domain]

    # ---------- Reads ----------

    def get_domains(self) -> List[str]:
        return list(self._config)

    def get_domain_config(self, domain: str):
        """GridworldConfig or DinnerConfig built from the stored values."""
        return CONFIG_CLASSES[domain](**self._section(domain)['config'])

    def get_csi_budget(self, domain: str) -> Dict[str, Any]:
        csi = self._section(domain)['csi']
        return {"k1": csi['k1'], "k2": csi['k2'], "mode": csi.get('mode')}

    def get_context_variables(self, domain: str) -> List[str]:
        return list(self._section(domain)['context_variables'])

    def get_lambda(self, domain: str, planner: str) -> Optional[float]:
        value = self._section(domain)['lambdas'].get(PLANNER_ALIASES.get(planner, planner))
        return None if value is None else float(value)

    def get_full_config(self) -> Dict[str, Any]:
        return json.loads(json.dumps(self._config))

    # ---------- Updates ----------

    def update_domain_config(self, domain: str, **changes) -> bool:
        merged = {**self._section(domain)['config'], **changes}
        try:
            CONFIG_CLASSES[domain](**merged)
        except Exception as e:
            logger.error(f"Rejected {domain} config update {changes}: {e}")
            return False
        self._config[domain]['config'] = merged
        logger.info(f"Updated {domain} config: {changes}")
        return self._save_config()

    def set_csi_budget(self, domain: str, k1: int, k2: int, mode: Optional[str] = None) -> bool:
        if not isinstance(k1, int) or not isinstance(k2, int) or k1 < 1 or k2 < 1:
            logger.error(f"Invalid CSI budget: k1={k1}, k2={k2}")
            return False
        self._section(domain)['csi'] = {"k1": k1, "k2": k2, "mode": mode}
        return self._save_config()

    def set_context_variables(self, domain: str, names: List[str]) -> bool:
        if not isinstance(names, list) or not all(isinstance(n, str) for n in names):
            logger.error(f"Invalid context-variable list: {names}")
            return False
        self._section(domain)['context_variables'] = names
        return self._save_config()

    def set_lambda(self, domain: str, planner: str, lam: float) -> bool:
        if planner not in PLANNER_ALIASES:
            logger.error(f"Unknown planner: {planner}")
            return False
        if lam < 0:
            logger.error(f"Lambda must be non-negative, got {lam}")
            return False
        self._section(domain)['lambdas'][PLANNER_ALIASES[planner]] = float(lam)
        logger.info(f"Set {domain} lambda for {PLANNER_ALIASES[planner]} to {lam}")
        return self._save_config()

    def reset_to_default(self) -> bool:
        self._config = self._create_default_config()
        logger.info("Domain config reset to defaults")
        return True

    def reload_config(self) -> bool:
        try:
            self._config = self._load_config()
            logger.info("Domain config reloaded")
            return True
        except Exception as e:
            logger.error(f"Failed to reload domain config: {e}", exc_info=True)
            return False
