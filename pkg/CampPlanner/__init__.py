"""
===== CAMP Planner =====
Context-specific abstract MDPs: learn context-specific independences, pick a
context per task and plan in the smaller abstract model.
"""

__version__ = "1.0"
__author__ = "CampPlanner contributors"
