"""Workload generator and benchmark harness."""
