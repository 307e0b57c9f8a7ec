"""Four classification heads over merged views of the five intent labels.

Run: python3 demos/05_multitask_heads.py
"""
import numpy as np

from msmtfn.heads import TASKS, HeadParams, merge_label, predict, task_losses, total_loss
from msmtfn.tensor import Tensor

print("label  " + "  ".join(f"{t:>5}" for t in TASKS))
for label in "ABCDE":
    print(f"  {label}    " + "  ".join(f"{merge_label(label, t):>5}" for t in TASKS))

rng = np.random.default_rng(0)
heads = HeadParams.init(rng, 8)
rep = Tensor(rng.normal(size=8), requires_grad=True)
for name, value in task_losses(rep, heads, "D").items():
    print(f"{name:>5} loss {value.item():.4f}")
loss = total_loss(rep, heads, "D")
print("summed loss", round(loss.item(), 4))
print("five-only loss", round(total_loss(rep, heads, "D", ("five",)).item(), 4))

for name, out in predict(rep, heads).items():
    print(name, out)
