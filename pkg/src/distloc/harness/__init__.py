"""Scenario configuration, Monte Carlo orchestration and output."""
