"""Reputation-driven sharded ledger: planning, allocation, consensus and simulation."""
