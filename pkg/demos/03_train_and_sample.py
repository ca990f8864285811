"""Train a small flow-matching policy and execute a few episodes."""
import numpy as np

from guidedflow.flowmatch import InferenceConfig, TrainConfig, sample_plain, train
from guidedflow.mazeworld import gen_demoset, load_maze, rollout
from guidedflow.nnet import VectorFieldNet

maze = load_maze("medium")
ds = gen_demoset(maze, 200, seed=0)

net = VectorFieldNet.create(action_dim=160, obs_dim=4, hidden=(256, 256, 256),
                            activation="tanh", seed=0, parameterization="endpoint")
net, losses = train(net, ds, TrainConfig(epochs=150, loss_weighting="endpoint"), rng_seed=0)
print("loss first/last epoch", losses[0], losses[-1])

obs, targets = ds.training_arrays()
A = sample_plain(net, obs[0], InferenceConfig(steps=5, seed=0))
print("rmse vs demo 0", np.sqrt(np.mean((A - targets[0]) ** 2)))

policy = lambda o, rng: sample_plain(net, o, InferenceConfig(steps=5), rng)
rng = np.random.default_rng(1)
for d in ds.demos[:5]:
    r = rollout(maze, policy, d.start, d.goal, ds.normalization, rng)
    print("success", r.success, "collided", r.collided)
