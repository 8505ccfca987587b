"""Numerical components of a YOLO-style traffic-sign detector.

Losses (IoU/CIoU/EIoU/WIoU/focal/BCE), Coordinate Attention, BiFPN fusion,
ODConv, LSKA, the Mosaic/MixUp augmentation pipeline, k-means anchors and
mAP evaluation, each with hand-written gradients where they apply.
"""

__version__ = "0.1.0"

from .anchors import AnchorSet, kmeans_anchors
from .augment import AugmentConfig, LabeledImage, augment_sample, letterbox, mixup, mosaic
from .evaluation import Detection, EvalReport, GroundTruth, average_precision, evaluate, fps_bench
from .losses import BBox, WiouState, bce_with_logits, ciou_loss, eiou_loss, focal_loss, iou, wiou_loss

__all__ = [
    "AnchorSet", "AugmentConfig", "BBox", "Detection", "EvalReport", "GroundTruth", "LabeledImage",
    "WiouState", "augment_sample", "average_precision", "bce_with_logits", "ciou_loss", "eiou_loss",
    "evaluate", "focal_loss", "fps_bench", "iou", "kmeans_anchors", "letterbox", "mixup", "mosaic",
    "wiou_loss",
]
