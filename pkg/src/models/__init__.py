"""Learning pipelines: FoE regularizers and TV discretization filters."""
