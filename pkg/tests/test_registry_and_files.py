import os
import time

import numpy as np

from CampPlanner.domain_dinner import DinnerConfig, dinner_sample_task
from CampPlanner.domain_gridworld import GridworldConfig, gridworld_sample_task
from CampPlanner.file_manager import (cleanup_old_results, create_output_directory, get_output_path,
                                      get_results_folder)
from CampPlanner.task_registry import TaskRegistry


def test_registry_rebuilds_identical_tasks(tmp_path):
    path = str(tmp_path / "tasks.json")
    grid_cfg = GridworldConfig(room_rows=1, room_cols=2, n_obstacles=2, horizon=12)
    grid_tasks = [gridworld_sample_task(grid_cfg, np.random.default_rng(i), f"g-{i}") for i in range(2)]
    dinner_task = dinner_sample_task(DinnerConfig(horizon=10), np.random.default_rng(3), "d-0")
    registry = TaskRegistry(path)
    assert registry.add_tasks(grid_tasks, "gridworld", "train", 0) == 2
    assert registry.add_task(dinner_task, "dinner", "test", 0) == "d-0"

    reloaded = TaskRegistry(path)
    assert len(reloaded) == 3
    rebuilt = reloaded.get_tasks(split="train", domain="gridworld")
    assert [t.task_id for t in rebuilt] == ["g-0", "g-1"]
    for original, copy in zip(grid_tasks, rebuilt):
        assert copy.initial_state == original.initial_state
        assert np.array_equal(copy.features, original.features)
        assert copy.mdp.horizon == 12
    (dinner_copy,) = reloaded.get_tasks(domain="dinner")
    assert np.array_equal(dinner_copy.features, dinner_task.features)
    assert dinner_copy.mdp.horizon == 10


def test_registry_removal(tmp_path):
    registry = TaskRegistry(str(tmp_path / "tasks.json"))
    task = dinner_sample_task(DinnerConfig(), np.random.default_rng(0), "d-0")
    registry.add_task(task, "dinner", "train", 0)
    assert registry.get_record("d-0")["split"] == "train"
    assert registry.remove_task("d-0")
    assert not registry.remove_task("d-0")
    assert TaskRegistry(str(tmp_path / "tasks.json")).get_record("d-0") is None


def test_registry_without_file_cannot_save():
    assert not TaskRegistry().save()


def test_output_paths(tmp_path):
    results = get_results_folder(str(tmp_path))
    assert results == os.path.join(str(tmp_path), "results")
    dated = create_output_directory(str(tmp_path))
    assert os.path.isdir(dated)
    assert os.path.dirname(dated) == results
    target = get_output_path("summary.csv", "json", out_dir=str(tmp_path / "out"))
    assert target == os.path.join(str(tmp_path / "out"), "summary.json")
    assert os.path.isdir(tmp_path / "out")


def test_cleanup_removes_only_old_folders(tmp_path):
    results = get_results_folder(str(tmp_path))
    old = os.path.join(results, "2000-01-01")
    new = os.path.join(results, "2999-01-01")
    os.makedirs(old)
    os.makedirs(new)
    stale = time.time() - 40 * 24 * 3600
    os.utime(old, (stale, stale))
    assert cleanup_old_results(days_to_keep=30, base_path=str(tmp_path)) == 1
    assert not os.path.exists(old)
    assert os.path.exists(new)
