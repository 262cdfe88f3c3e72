"""
Carrying a hidden state through a sequence
==========================================

The vehicle drives forward two voxels per frame.  A feature grid from the
previous frame is warped into the current one, and only the overlapping
part survives.  The ground-truth slices of a static world agree perfectly
on that overlap, which is what makes the warp trustworthy.
"""
import numpy as np

from voxfuse import GdpConfig, InitPolicy, RigidPose, SequenceState, consistency, step_state
from voxfuse.pipeline import lift_frame
from voxfuse.synth import Rig, generate_world, make_sequence, straight_trajectory

world = generate_world(3, (64, 64, 16), ("ground-plane", "boxes", "random-blobs"))
rig = Rig.desk()
seq = make_sequence(world, rig, straight_trajectory(5, rig.spec, start_voxels=(2, 32, 5), step_voxels=(2, 0, 0)))

state = SequenceState.start(rig.spec, 20, InitPolicy("zeros"))
cfg = GdpConfig(sigma=2)
prev = None
for i, fr in enumerate(seq.frames):
    rel = fr.vehicle_pose.compose(prev.vehicle_pose.inverse()) if prev else RigidPose.identity()
    lifted = lift_frame(fr, rig, cfg).features

    def producer(aligned, lifted=lifted):
        # stand-in for the network: keep what was seen before, add what is seen now
        return type(aligned)(aligned.spec, aligned.features + lifted.features)

    state = step_state(state, rel, rig.spec, producer)
    seen = int(np.any(state.hidden.features != 0, axis=-1).sum())
    line = f"frame {i}: overlap {state.overlap.count():>6} voxels, voxels with features {seen:>6}"
    if prev is not None:
        iou, mi = consistency(prev.gt, fr.gt, rel)
        line += f", GT consistency iou={iou:.3f} miou={mi:.3f}"
    print(line)
    prev = fr
