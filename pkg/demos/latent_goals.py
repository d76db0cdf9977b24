"""Why distances in a learned latent space make a better reward than pixels.

We train the reacher VAE on 100 random images, then slide the agent along a
horizontal line towards a goal and print three rewards at each position:
latent Euclidean distance, pixel MSE against the goal image, and the true
distance. The discs are drawn with radius 0.6, so once the agent is more
than 1.2 from the goal the two stop overlapping and pixel MSE goes flat
(near the border it even improves, as the clipped disc lights fewer pixels).
The latent distance keeps growing with the true distance over most of the
range.

    python demos/latent_goals.py
"""
import numpy as np

from rig import envs, vae
from rig.experiment import collect_exploration_data
from rig.nn import make_rng
from rig.presets import resolve
from rig.replay import RewardType, compute_reward

cfg = resolve("rig-reacher")
spec, v = cfg.env, cfg.vae
rng = make_rng(0)

# the same data and training budget the preset uses
images = collect_exploration_data(cfg, rng)
model = vae.VaeModel(spec.n_pixels, v.latent_dim, v.beta, v.hidden, rng)
log = vae.train_vae(model, images, v.pretrain_epochs, v.lr, rng, v.batch_size)
prior = vae.fit_prior(model, images)
print(f"VAE trained on {len(images)} images; final loss {log.loss[-1]:.2f}")
print("fitted prior mean", np.round(prior.mean, 3), "variance", np.round(prior.variance, 3))

goal = envs.EnvState((0.6, 0.0))
goal_img = envs.render(spec, goal).reshape(-1)
z_goal = vae.encode_mean(model, goal_img)
latent = RewardType("latent_euclid", 1.0)
pixel = RewardType("pixel_mse", 1.0)

print(f"\n{'agent x':>8} {'true dist':>10} {'latent r':>10} {'pixel r':>10}")
for x in np.linspace(-0.9, 0.6, 11):
    img = envs.render(spec, envs.EnvState((x, 0.0))).reshape(-1)
    z = vae.encode_mean(model, img)
    r_lat = compute_reward(latent, z_next=z, z_goal=z_goal)
    r_pix = compute_reward(pixel, next_image=img, goal_image=goal_img)
    print(f"{x:8.2f} {abs(0.6 - x):10.2f} {r_lat:10.3f} {r_pix:10.4f}")

# a goal sampled from the prior, decoded back to an image
z_sampled = vae.sample_prior(prior, rng)
picture = vae.decode(model, z_sampled).reshape(spec.image_shape)[:, :, 0]
print("\nagent channel of a decoded prior sample:")
for row in picture:
    print("".join("#" if p > 0.5 else "." for p in row))
