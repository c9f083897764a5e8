"""Fusion buffer on a hand-made example.

Three frames taken 1 m apart each predict curvature for the next three metres.
The last frame is uncertain, so evidential fusion leans on the older ones.
"""
from lidarnav.fusion import PredictionBuffer, fuse, record

buf = PredictionBuffer(K=3)
record(buf, 0.0, [0.10, 0.10, 0.12], variances=[0.01, 0.02, 0.04])
record(buf, 1.0, [0.11, 0.13, 0.15], variances=[0.01, 0.02, 0.04])
record(buf, 2.0, [0.30, 0.32, 0.35], variances=[1.0, 1.0, 1.0])   # a noisy frame

for e in buf.entries(2.0):
    print(f"entry k={e.k}  x={e.x:+.3f}  lambda={e.lam:7.2f}")
for mode in ("none", "uniform", "evidential"):
    r = fuse(buf, 2.0, mode)
    print(f"{mode:10s} control={r.control:+.4f}  weights={r.weights.round(3).tolist()}")

# equal confidences reduce to the plain mean
eq = PredictionBuffer(K=2)
record(eq, 0.0, [0.0, 1.0], variances=[0.5, 0.5])
record(eq, 1.0, [3.0], variances=[0.5])
print("equal confidence:", fuse(eq, 1.0, "evidential").control, "==", fuse(eq, 1.0, "uniform").control)
