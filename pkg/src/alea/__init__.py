"""Asynchronous BFT atomic broadcast: replica core, simulator and tooling."""
