"""Deterministic virtual-device simulation: synthetic collectors, a
store-and-forward upload queue with crash recovery, participant behavior,
and the scenario runner that drives devices against the study server."""
