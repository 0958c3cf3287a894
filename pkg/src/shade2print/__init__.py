"""Image -> surface -> printable object toolkit.

Subpackages cover the whole chain: scalar fields and contouring
(:mod:`~shade2print.field`), forward brightness models
(:mod:`~shade2print.reflectance`), shape-from-shading solvers
(:mod:`~shade2print.sfs`), two-image photometric stereo
(:mod:`~shade2print.photostereo`), triangle meshes and STL I/O
(:mod:`~shade2print.mesh`), signed distance fields (:mod:`~shade2print.sdf`),
level-set front propagation (:mod:`~shade2print.levelset`), overhang
detection and repair (:mod:`~shade2print.overhang`), and the slicer with
eikonal-offset infill and G-code emission (:mod:`~shade2print.slicer`).
"""

__version__ = "0.1.0"
