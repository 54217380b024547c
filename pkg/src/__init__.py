"""
PNM Volt/VAr Control
不平衡配電饋線的投影牛頓法電壓/無效功控制

Core modules for feeder modeling, linearized power flow, the nonlinear plant,
offline and online solvers, and discrete device scheduling.
"""

__version__ = "0.1.0"
