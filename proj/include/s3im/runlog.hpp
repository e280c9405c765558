#pragma once

#include <cstddef>
#include <vector>

#include "s3im/image.hpp"

namespace s3im {

struct EvalRecord {
    std::size_t iteration = 0;
    double train_mse = 0;   ///< base color loss of the step's minibatch
    double train_s3im = 0;  ///< S3IM loss component of that step (0 for standard training)
    double test_psnr = 0;   ///< mean over test images; +inf when exact
    double test_ssim = 0;   ///< mean evaluation-grade SSIM over test images
    double wall_ms = 0;
};

struct RunLog {
    std::vector<EvalRecord> records;
    std::vector<ImageBuffer> test_images;  ///< final renders of the test set
};

} // namespace s3im
