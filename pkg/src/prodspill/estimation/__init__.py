"""Two-stage estimator: share equation, then profiled sieve NLS."""
