"""Simulation and verification of Markov branching growth-fragmentations."""
