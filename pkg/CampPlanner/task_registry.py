import os
import json
import logging
import time
from dataclasses import asdict
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from .core import Task
from .domain_config_manager import CONFIG_CLASSES
from .harness import domain_binding

logger = logging.getLogger(__name__)


def _json_params(params) -> Dict[str, Any]:
    """Task parameters without in-memory objects (the domain config is stored separately)."""
    return {k: v for k, v in params.items() if not k.startswith("_")}


class TaskRegistry:
    """
    JSON manifest of sampled tasks.
    Records hold the id, domain, split, seed, domain config, parameters and
    features; reloading rebuilds identical Task objects.
    """

    def __init__(self, registry_file: Optional[str] = None):
        self.registry_file = None
        self.tasks: Dict[str, Dict[str, Any]] = {}
        if registry_file:
            self.set_registry_file(registry_file)

    def __len__(self) -> int:
        return len(self.tasks)

    def set_registry_file(self, file_path: str) -> bool:
        try:
            self.registry_file = file_path
            if os.path.exists(file_path):
                self.load()
            else:
                directory = os.path.dirname(file_path)
                if directory:
                    os.makedirs(directory, exist_ok=True)
                self.tasks = {}
                self.save()
            logger.info(f"Task registry file: {file_path}")
            return True
        except Exception as e:
            logger.error(f"Failed to set task registry file: {e}", exc_info=True)
            return False

    def load(self) -> bool:
        if not self.registry_file or not os.path.exists(self.registry_file):
            logger.error("Task registry file does not exist")
            return False
        try:
            with open(self.registry_file, 'r', encoding='utf-8') as f:
                data = json.load(f)
            self.tasks = {str(k): v for k, v in data.get('tasks', {}).items()}
            logger.info(f"Loaded {len(self.tasks)} task records from {self.registry_file}")
            return True
        except Exception as e:
            logger.error(f"Failed to load task registry: {e}", exc_info=True)
            return False

    def save(self) -> bool:
        if not self.registry_file:
            logger.error("Task registry file is not set")
            return False
        try:
            directory = os.path.dirname(self.registry_file)
            if directory:
                os.makedirs(directory, exist_ok=True)
            data = {
                'tasks': self.tasks,
                'last_updated': time.strftime('%Y-%m-%d %H:%M:%S'),
            }
            with open(self.registry_file, 'w', encoding='utf-8') as f:
                json.dump(data, f, ensure_ascii=False, indent=2)
            logger.info(f"Saved {len(self.tasks)} task records to {self.registry_file}")
            return True
        except Exception as e:
            logger.error(f"Failed to save task registry: {e}", exc_info=True)
            return False

    def add_task(self, task: Task, domain: str, split: str, seed: int, save: bool = True) -> Optional[str]:
        config = task.params.get("_config")
        if config is None:
            logger.error(f"Task {task.task_id} carries no domain config and cannot be registered")
            return None
        self.tasks[task.task_id] = {
            'task_id': task.task_id,
            'domain': domain,
            'split': split,
            'seed': int(seed),
            'config': json.loads(json.dumps(asdict(config))),
            'params': _json_params(task.params),
            'features': [float(x) for x in task.features],
            'added_time': time.strftime('%Y-%m-%d %H:%M:%S'),
        }
        if save:
            self.save()
        return task.task_id

    def add_tasks(self, tasks: Sequence[Task], domain: str, split: str, seed: int) -> int:
        added = sum(self.add_task(task, domain, split, seed, save=False) is not None for task in tasks)
        self.save()
        logger.info(f"Registered {added} {domain} tasks in split {split}")
        return added

    def get_record(self, task_id: str) -> Optional[Dict[str, Any]]:
        return self.tasks.get(str(task_id))

    def remove_task(self, task_id: str) -> bool:
        if str(task_id) not in self.tasks:
            logger.warning(f"Task record not found: {task_id}")
            return False
        del self.tasks[str(task_id)]
        return self.save()

    def build_task(self, record: Dict[str, Any]) -> Task:
        config = CONFIG_CLASSES[record['domain']](**record['config'])
        binding = domain_binding(record['domain'], config)
        task = binding.task_from_params(config, record['task_id'], record['params'])
        if not np.allclose(task.features, np.asarray(record['features'], dtype=float)):
            logger.warning(f"Rebuilt features of {record['task_id']} differ from the stored ones")
        return task

    def get_tasks(self, split: Optional[str] = None, domain: Optional[str] = None) -> List[Task]:
        """Tasks in registration order, optionally filtered by split and domain."""
        out = []
        for record in self.tasks.values():
            if split is not None and record['split'] != split:
                continue
            if domain is not None and record['domain'] != domain:
                continue
            out.append(self.build_task(record))
        return out
