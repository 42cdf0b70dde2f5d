# CampPlanner/settings_model.py
import os
import json
import logging

logger = logging.getLogger(__name__)


class SettingsModel:
    """Handles loading and saving run settings from/to a JSON file.

    Every CLI flag has a key here; `resolve` layers profile values and then
    explicit overrides on top of the stored settings.
    """

    SETTINGS_FILENAME = "settings.json"
    DEFAULT_SETTINGS = {
        'domain': 'dinner',
        'planner': None,          # None -> the domain's default planner
        'lambda': None,           # None -> the planner's default lambda
        'seed': 0,
        'n_train': None,
        'n_test': None,
        'runs': 3,
        'out': None,
        'cost_channel': 'expansions',
        'seconds_per_expansion': 1e-5,
        'profile': 'fast',
        'max_context_len': 2,
        'domain_size_threshold': 8,
        'timeout_seconds': 60.0,
        'retention_days': 30,
        'log_level': 'INFO',
    }

    # Profile values are applied before explicit overrides.
    PROFILES = {
        'full': {
            'runs': 10,
            'selector_max_epochs': 50000,
            'policy_max_epochs': 50000,
            'mcts_budget_seconds': 1.0,
        },
        'fast': {
            'runs': 3,
            'selector_max_epochs': 2000,
            'policy_max_epochs': 1000,
            'mcts_budget_seconds': 0.05,
        },
    }

    def __init__(self, settings_path=None):
        self._settings_path = settings_path or self._get_settings_path()
        logger.info(f"Settings file path determined: {self._settings_path}")

    def _get_settings_path(self):
        return os.path.join(os.path.dirname(__file__), self.SETTINGS_FILENAME)

    def load(self):
        """
        Loads settings from the JSON file.
        Returns the merged settings dictionary or defaults if the file is missing/invalid.
        """
        if not os.path.exists(self._settings_path):
            logger.warning(f"Settings file not found at {self._settings_path}. Returning default settings.")
            return self.DEFAULT_SETTINGS.copy()

        try:
            with open(self._settings_path, 'r', encoding='utf-8') as f:
                loaded_settings = json.load(f)
            if not isinstance(loaded_settings, dict):
                raise TypeError("settings document must be a JSON object")
            settings = self.DEFAULT_SETTINGS.copy()
            settings.update(loaded_settings)
            logger.info("Settings loaded successfully.")
            return settings
        except json.JSONDecodeError:
            logger.error(f"Error decoding JSON from {self._settings_path}. Returning default settings.", exc_info=True)
            return self.DEFAULT_SETTINGS.copy()
        except Exception:
            logger.error(f"Error reading settings file {self._settings_path}. Returning default settings.", exc_info=True)
            return self.DEFAULT_SETTINGS.copy()

    def save(self, settings_data):
        """
        Saves the provided settings dictionary to the JSON file.
        Returns True on success, False on failure.
        """
        logger.debug(f"Attempting to save settings: {settings_data}")
        try:
            with open(self._settings_path, 'w', encoding='utf-8') as f:
                json.dump(settings_data, f, ensure_ascii=False, indent=2)
            logger.info(f"Settings saved successfully to {self._settings_path}")
            return True
        except Exception:
            logger.error(f"Error writing settings file {self._settings_path}", exc_info=True)
            return False

    def resolve(self, overrides=None, base=None):
        """Stored settings, then the selected profile, then non-None overrides."""
        settings = dict(base) if base is not None else self.load()
        overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
        profile = overrides.get('profile', settings.get('profile', 'fast'))
        if profile not in self.PROFILES:
            raise ValueError(f"unknown profile {profile!r}; expected one of {sorted(self.PROFILES)}")
        settings.update(self.PROFILES[profile])
        settings.update(overrides)
        settings['profile'] = profile
        return settings
