from ._metrics import (ROISpec, Histogram, roi_stats, volume_histogram, to_display_range, self_ssim, center_rois,
                       cycle_difference_image, anomaly_contrast, dice, air_dice, checkerboard_overlay,
                       HISTOGRAM_BINS, HISTOGRAM_RANGE, AIR_THRESHOLD_HU)
from ._report import (EvalReport, REPORT_SCHEMA, REPORT_VERSION, ROI_COLUMNS, build_report, emit_report,
                      validate_report, rois_from_manifest, plot_histograms, plot_roi_violins, plot_checkerboard,
                      plot_cycle_difference)
