"""Fog and cloud daemons, replay client and the wire protocol joining them.

Submodules are imported explicitly (``fogids.netsvc.fog`` etc.) so the
protocol can be used without pulling in the model stack.
"""
