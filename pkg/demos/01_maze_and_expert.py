"""Mazes, collision checks and expert demonstrations."""
import numpy as np

from guidedflow.mazeworld import (gen_demoset, load_maze, path_collisions, plan_expert,
                                  sample_free_pose, segment_collides)

maze = load_maze("large")
print(maze.to_text())
print("bounds", maze.bounds, "walls", len(maze.walls))

# one segment inside a corridor, one straight through the middle of the map
print(segment_collides(maze, [1.2, 1.5], [4.8, 1.5]))
print(segment_collides(maze, [1.5, 1.5], [10.5, 7.5]))

rng = np.random.default_rng(0)
start, goal = sample_free_pose(maze, rng, min_goal_separation=2.0)
demo = plan_expert(maze, start, goal, horizon=80)
print("start", start, "goal", goal)
print("waypoints", demo.waypoints.shape, "collisions", path_collisions(maze, demo.waypoints).sum())

# a demo set, with coordinates mapped from the maze bounds onto [-1, 1]
ds = gen_demoset(maze, 100, horizon=80, seed=0)
obs, targets = ds.training_arrays()
print(obs.shape, targets.shape, targets.min(), targets.max())
