from catpose.render.bvh import RayAccel, build_accel, intersect_brute_force
from catpose.render.renderer import (FAR_CLIP, NEAR_CLIP, DepthRenderer,
                                     RenderedView, depth_to_pointcloud,
                                     render_depth, render_rgb_lambertian,
                                     visible_fraction)

__all__ = ['RayAccel', 'build_accel', 'intersect_brute_force',
           'DepthRenderer', 'RenderedView', 'render_depth',
           'render_rgb_lambertian', 'depth_to_pointcloud',
           'visible_fraction', 'NEAR_CLIP', 'FAR_CLIP']
