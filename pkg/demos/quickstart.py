"""Generate a small dataset, train briefly and drive one lap of the test track.

Takes a few minutes on one core. The model is far from converged; the point
is the end-to-end path.
"""
import tempfile
from pathlib import Path

from lidarnav.sim import EpisodeConfig, NetworkPolicy, gen_dataset, load_dataset, make_track, run_episode
from lidarnav.trainer import TrainConfig, evaluate, train

with tempfile.TemporaryDirectory() as tmp:
    data = Path(tmp) / "data"
    manifest = gen_dataset(["train_a", "train_b_cw"], 240, 0, data)
    print("frames:", manifest["tag_counts"])
    _, frames = load_dataset(data)

cfg = TrainConfig(epochs=2, batch_size=16, seed=0, d_recover=8.0)
result = train(frames, cfg, log=print)
print("held-in eval:", evaluate(result.net, frames[:60], cfg))

policy = NetworkPolicy(result.net)
track = make_track("test")
for mode in ("none", "evidential"):
    trace = run_episode(policy, track, None, EpisodeConfig(distance=100.0), 0, mode)
    s = trace.summary()
    print(f"{mode:10s} interventions={s['interventions']}  max |cte|={s['max_abs_cross_track']:.2f} m")
