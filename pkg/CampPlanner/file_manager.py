"""
File management: the results folder, dated output directories and cleanup of old runs.
"""

import os
import time
import shutil
import tempfile
from datetime import datetime
import logging

logger = logging.getLogger(__name__)

RESULTS_DIRNAME = "results"
TEMP_DIRNAME = "CampPlanner_Results"


def get_results_folder(base_path=None):
    """Path of the results folder, created on demand.

    Defaults to `<package>/results`; falls back to a temp directory when that
    location is not writable.
    """
    try:
        if base_path is None:
            base_path = os.path.dirname(os.path.abspath(__file__))
        results_dir = os.path.join(base_path, RESULTS_DIRNAME)
        os.makedirs(results_dir, exist_ok=True)
        if not os.access(results_dir, os.W_OK):
            raise PermissionError(f"results folder is not writable: {results_dir}")
        return results_dir
    except Exception as e:
        temp_dir = os.path.join(tempfile.gettempdir(), TEMP_DIRNAME)
        logger.error(f"Could not use results folder: {e}, falling back to {temp_dir}")
        os.makedirs(temp_dir, exist_ok=True)
        return temp_dir


def create_output_directory(base_path=None):
    """results/YYYY-MM-DD for today, created if needed."""
    today = datetime.now()
    date_dir = os.path.join(get_results_folder(base_path), f"{today.year:04d}-{today.month:02d}-{today.day:02d}")
    try:
        os.makedirs(date_dir, exist_ok=True)
        return date_dir
    except Exception as e:
        temp_dir = os.path.join(tempfile.gettempdir(), TEMP_DIRNAME, os.path.basename(date_dir))
        logger.error(f"Could not create output directory: {e}, using {temp_dir}")
        os.makedirs(temp_dir, exist_ok=True)
        return temp_dir


def get_output_path(name, extension=None, out_dir=None):
    """Output file path for `name`, in `out_dir` or today's output directory.

    `extension` (without the dot) replaces the name's extension when given.
    """
    output_dir = out_dir or create_output_directory()
    os.makedirs(output_dir, exist_ok=True)
    base_name = os.path.basename(name)
    if extension:
        base_name = os.path.splitext(base_name)[0] + f".{extension}"
    return os.path.join(output_dir, base_name)


def cleanup_old_results(days_to_keep=30, base_path=None):
    """Removes dated result folders older than `days_to_keep`; returns how many were removed."""
    try:
        base_dir = get_results_folder(base_path)
        current_time = time.time()
        cleaned_count = 0
        for dir_name in os.listdir(base_dir):
            dir_path = os.path.join(base_dir, dir_name)
            if not os.path.isdir(dir_path):
                continue
            if (current_time - os.path.getmtime(dir_path)) / (24 * 3600) > days_to_keep:
                try:
                    shutil.rmtree(dir_path)
                    logger.info(f"Removed old results directory: {dir_path}")
                    cleaned_count += 1
                except Exception as e:
                    logger.error(f"Could not remove {dir_path}: {e}")
        return cleaned_count
    except Exception as e:
        logger.error(f"Cleanup of old results failed: {e}")
        return 0
