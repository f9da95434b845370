"""Cross-view attention and the contrastive matching loss, with gradients.

Runs one forward/backward pass on a toy instance: candidates attend
over the other view's feature map, descriptors are assembled and
embedded, and the contrastive loss backpropagates through everything
on the gradient tape.
"""

import numpy as np

from maskmatch import numeric
from maskmatch.attention import cross_attend, refine_descriptors
from maskmatch.encoder import MaskDescriptor
from maskmatch.head import LossConfig, assemble_rho, embed, info_nce
from maskmatch.training import TrainConfig, init_model

rng = np.random.default_rng(5)
d = 8
model = init_model(d, TrainConfig(hidden=32, latent_dim=16, max_tokens=64), rng)

src_map = rng.standard_normal((4, 4, d))
dst_map = rng.standard_normal((4, 4, d))
source = MaskDescriptor(object=rng.standard_normal(d), context=rng.standard_normal(d))
candidates = [
    MaskDescriptor(object=rng.standard_normal(d), context=rng.standard_normal(d))
    for _ in range(4)
]

tape = numeric.Tape()
refine_descriptors(source, candidates, src_map, dst_map, model.attn, tape)
print("cross-view embedding of candidate 0:", np.round(candidates[0].cross_view.data[:4], 3), "...")

# attention output is a convex combination of value-projected tokens
single = cross_attend([candidates[0].object], np.ones((1, 1, d)), model.attn)
print("single-token attention collapses to that token's value projection:",
      single[0].data.shape)

src_emb = embed(assemble_rho(source, tape), model.mlp, tape)
sims = numeric.stack_scalars(
    [
        numeric.cosine_sim(embed(assemble_rho(c, tape), model.mlp, tape), src_emb, tape)
        for c in candidates
    ],
    tape,
)
print("cosine similarities:", np.round(sims.data, 4))

loss = info_nce(sims, 0, LossConfig(temperature=0.2, batch=4), tape)
print(f"contrastive loss: {float(loss.data):.4f}  (uniform would be ln 4 = {np.log(4):.4f})")

numeric.zero_grads(model.tensors().values())
tape.backward(loss)
for name, t in list(model.tensors().items())[:4]:
    print(f"grad {name}: max |g| = {np.abs(t.grad).max():.2e}")
