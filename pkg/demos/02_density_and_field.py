"""Waypoint density, the safe set and the guidance field."""
import numpy as np

from guidedflow.density import build_kde, log_density_many
from guidedflow.mazeworld import gen_demoset, load_maze
from guidedflow.potential import build_field, field_over_series, potential

maze = load_maze("medium")
ds = gen_demoset(maze, 300, seed=1)

kde = build_kde(ds, subsample=3000, bandwidth="scott", seed=0)
print("M", kde.M, "h", round(kde.bandwidth, 4))

field = build_field(kde, quantile=0.05, alpha=-1.0, cap="threshold")
print("anchors", field.safe.anchors.shape[0], "threshold", round(field.safe.threshold, 3))

# log-density along a horizontal line through the maze (normalized coordinates)
line = np.stack([np.linspace(-1, 1, 9), np.zeros(9)], axis=1)
print(np.round(log_density_many(kde, line), 2))

# potential of a point on the data vs. one far away
print(potential(field, kde.points[0]), potential(field, np.array([0.95, 0.95])))

# the field for a whole action series is the per-waypoint gradient
A = np.random.default_rng(0).uniform(-1, 1, size=(80, 2))
G = field_over_series(field, A)
print(G.shape, np.abs(G).max())
