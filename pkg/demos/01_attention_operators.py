# # Attention operators, mean substitution and the bypass reward
#
# A walk through the pieces one residual block uses: the three attention
# actors, what "bypassing" an attention map means, and how the reward of a
# block is read off the class probabilities.

import torch

from dreal import actors, compute_reward, mean_substitute
from dreal.actors import ChannelActor, SpatialActor, StyleActor
from dreal.backbone import recalibrate

torch.manual_seed(0)

# A batch of 2 feature maps with 8 channels on a 6x6 grid (NCHW).
F = torch.randn(2, 8, 6, 6)

# ## Channel attention (squeeze-and-excitation)
# Global average pool -> FC -> ReLU -> FC -> sigmoid, one weight per channel.
se = ChannelActor(channels=8, hidden=4)
a_c = se(F)
print("channel action", a_c.values.shape, a_c.values[0])

# ## CBAM: channel (avg + max pooled) followed by spatial attention
# The spatial actor reads the channel-recalibrated map.
cbam_c = ChannelActor(8, 4, use_max=True)
sp = SpatialActor()
a1 = cbam_c(F)
a2 = sp(recalibrate(F, a1))
print("spatial action", a2.values.shape)

# ## Style recalibration (SRM)
# Per-channel mean and standard deviation, a 2-tap channel-wise FC, BN, sigmoid.
srm = StyleActor(8)
print("style action", srm(F).values[0])

# Every actor ends in a sigmoid, so actions live strictly inside (0, 1).
for a in (a_c, a1, a2):
    assert (a.values > 0).all() and (a.values < 1).all()

# ## Bypassing a block
# The bypass replaces a block's action with its per-sample mean. The overall
# scale is kept but the emphasis on individual channels is gone.
flat = mean_substitute(a_c)
print("before", a_c.values[0, :4], "\nafter ", flat.values[0, :4])
print("same mean:", torch.allclose(a_c.values.mean(1), flat.values.mean(1)))

# A constant action is left alone, which is why bypassing a block that does
# not discriminate costs nothing.
const = actors.AttentionAction("channel", torch.full((1, 8), 0.5))
print("constant unchanged:", torch.equal(mean_substitute(const).values, const.values))

# ## Reward
# If the full network predicts the right class with probability 0.8 and the
# bypassed network only with 0.4, the block was responsible for half of it.
print("R =", compute_reward(0.8, 0.4, True))
# A wrong prediction is penalised with -gamma (gamma = 1 by default).
print("R =", compute_reward(0.8, 0.4, False))
