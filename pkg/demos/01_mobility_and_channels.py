"""Mobility and channel walk-through.

Steps a few users through the random-waypoint model, then shows how
path loss, noise floor, and Rayleigh fading shape what an SU receives.
"""

import numpy as np

from senselab.mobility import (
    ScenarioConfig, draw_channel_gain, generate_period, instantaneous_snr,
    received_power_dbm, simulate_trajectories, substream,
)

cfg = ScenarioConfig(seed=7)
print(f"arena {cfg.area[0]:.0f} x {cfg.area[1]:.0f} m, speeds "
      f"[{cfg.v_min}, {cfg.v_max}] m/s, {cfg.num_su} SUs x {cfg.num_antennas} antennas")

# --- trajectories ---------------------------------------------------------
pu_xy, su_xy = simulate_trajectories(cfg, 12)
print("\nfirst 12 PU positions (one per sensing period):")
for t in range(0, 12, 3):
    x, y = pu_xy[t]
    print(f"  t={t:2d}  ({x:7.1f}, {y:7.1f})")

steps = np.linalg.norm(np.diff(pu_xy, axis=0), axis=1)
moving = steps[steps > 1e-9]
print(f"step lengths while moving: min {moving.min():.1f} m, "
      f"max {moving.max():.1f} m (speed x {cfg.period_s:.0f} s period)")

# --- path loss and SNR ----------------------------------------------------
noise_dbm = cfg.n0_dbm_per_hz + 10 * np.log10(cfg.bw_hz)
print(f"\nnoise floor: {cfg.n0_dbm_per_hz} dBm/Hz over {cfg.bw_hz/1e6:.0f} MHz "
      f"= {noise_dbm:.1f} dBm")
print("distance -> received power -> SNR:")
for d in (10, 50, 100, 300, 1000):
    pr = received_power_dbm(cfg.pt_dbm, d, cfg.alpha, cfg.beta)
    snr = instantaneous_snr(pr, cfg.n0_dbm_per_hz, cfg.bw_hz)
    print(f"  {d:5d} m   {pr:8.2f} dBm   {10*np.log10(snr):8.2f} dB")

# --- fading ---------------------------------------------------------------
rng = substream(7, 99)
for scale in (1.0, 2.0):
    h = draw_channel_gain(scale, rng, 100_000)
    print(f"\nRayleigh scale {scale}: E|h|^2 = {np.mean(np.abs(h)**2):.4f} "
          f"(expected {scale**2}), |E[h]| = {abs(np.mean(h)):.4f} (expected 0)")

# --- one sensing period ---------------------------------------------------
mats = generate_period(cfg, tuple(pu_xy[0]), su_xy[0], pu_active=True,
                       rng=substream(7, 1, 0), period_index=0)
print(f"\none PU-active period: {len(mats)} signal matrices, "
      f"shape {mats[0].entries.shape} (antennas x samples)")
for mat in mats:
    d = np.hypot(*(np.array(pu_xy[0]) - su_xy[0][mat.su_index]))
    power = np.mean(np.abs(mat.entries) ** 2)
    print(f"  SU {mat.su_index}: PU distance {d:6.1f} m, "
          f"mean sample power {power:.3e} mW "
          f"({10*np.log10(power / cfg.noise_power_mw):+.2f} dB over noise)")
