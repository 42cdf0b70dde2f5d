import json
import os

import pytest

from CampPlanner.domain_config_manager import DomainConfigManager
from CampPlanner.domain_dinner import DinnerConfig
from CampPlanner.domain_gridworld import GridworldConfig
from CampPlanner.settings_model import SettingsModel


def test_missing_settings_file_gives_defaults(tmp_path):
    model = SettingsModel(str(tmp_path / "settings.json"))
    assert model.load() == SettingsModel.DEFAULT_SETTINGS


def test_corrupt_settings_file_gives_defaults(tmp_path):
    path = tmp_path / "settings.json"
    path.write_text("{not json", encoding="utf-8")
    assert SettingsModel(str(path)).load()["domain"] == "dinner"


def test_settings_save_and_load(tmp_path):
    model = SettingsModel(str(tmp_path / "settings.json"))
    assert model.save({"domain": "gridworld", "seed": 7})
    loaded = model.load()
    assert loaded["domain"] == "gridworld"
    assert loaded["seed"] == 7
    assert loaded["cost_channel"] == "expansions"


def test_resolve_layers_profile_then_overrides():
    model = SettingsModel("unused.json")
    base = dict(SettingsModel.DEFAULT_SETTINGS)
    fast = model.resolve({}, base=base)
    assert fast["runs"] == 3
    assert fast["mcts_budget_seconds"] == 0.05
    full = model.resolve({"profile": "full", "runs": 2, "seed": None}, base=base)
    assert full["runs"] == 2
    assert full["selector_max_epochs"] == 50000
    assert full["seed"] == 0
    assert full["profile"] == "full"
    with pytest.raises(ValueError):
        model.resolve({"profile": "huge"}, base=base)


def test_missing_domain_config_is_created(tmp_path):
    path = tmp_path / "domain_config.json"
    manager = DomainConfigManager(str(path))
    assert path.exists()
    assert set(manager.get_domains()) == {"gridworld", "dinner"}
    assert manager.get_domain_config("gridworld") == GridworldConfig()
    assert manager.get_domain_config("dinner") == DinnerConfig()
    assert manager.get_csi_budget("dinner") == {"k1": 40, "k2": 40, "mode": None}
    assert manager.get_csi_budget("gridworld") == {"k1": 50, "k2": 50, "mode": None}
    assert manager.get_context_variables("gridworld") == ["agent_room"]
    assert manager.get_lambda("dinner", "optimal") == 250.0


def test_domain_config_updates_persist_with_backup(tmp_path):
    path = tmp_path / "domain_config.json"
    manager = DomainConfigManager(str(path))
    assert manager.update_domain_config("dinner", horizon=12)
    assert os.path.exists(f"{path}.bak")
    assert manager.set_lambda("dinner", "bfs", 42.0)
    assert manager.set_csi_budget("gridworld", 500, 4, "exact")
    reloaded = DomainConfigManager(str(path))
    assert reloaded.get_domain_config("dinner").horizon == 12
    assert reloaded.get_lambda("dinner", "bfs_replan") == 42.0
    assert reloaded.get_csi_budget("gridworld") == {"k1": 500, "k2": 4, "mode": "exact"}


def test_invalid_domain_config_changes_are_rejected(tmp_path):
    manager = DomainConfigManager(str(tmp_path / "domain_config.json"))
    assert not manager.update_domain_config("dinner", horizon=0)
    assert not manager.set_lambda("dinner", "dijkstra", 1.0)
    assert not manager.set_lambda("dinner", "mcts", -1.0)
    assert not manager.set_csi_budget("dinner", 0, 8)
    assert not manager.set_context_variables("dinner", "location")
    assert manager.get_domain_config("dinner").horizon == 25
    with pytest.raises(ValueError):
        manager.get_context_variables("sokoban")


def test_invalid_domain_config_file_falls_back_to_defaults(tmp_path):
    path = tmp_path / "domain_config.json"
    document = DomainConfigManager(str(path)).get_full_config()
    document["dinner"]["config"]["spice_level"] = 3
    path.write_text(json.dumps(document), encoding="utf-8")
    manager = DomainConfigManager(str(path))
    assert manager.get_domain_config("dinner") == DinnerConfig()


def test_reset_restores_defaults(tmp_path):
    manager = DomainConfigManager(str(tmp_path / "domain_config.json"))
    manager.set_context_variables("gridworld", [])
    assert manager.reset_to_default()
    assert manager.get_context_variables("gridworld") == ["agent_room"]
