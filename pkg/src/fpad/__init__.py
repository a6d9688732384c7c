"""Two-stream optical fingerprint presentation attack detection pipeline.

Image enhancement and perspective calibration (:mod:`fpad.imaging`), uniform
and color LBP features (:mod:`fpad.texture`), a squared-hinge linear SVM
(:mod:`fpad.classifier`) and the live/spoof evaluation protocol
(:mod:`fpad.evaluation`).
"""

__version__ = "0.1.0"
