#pragma once

#include "s3im/errors.hpp"
#include "s3im/field.hpp"
#include "s3im/gradcheck.hpp"
#include "s3im/image.hpp"
#include "s3im/io.hpp"
#include "s3im/losses.hpp"
#include "s3im/metrics.hpp"
#include "s3im/patch.hpp"
#include "s3im/rng.hpp"
#include "s3im/runlog.hpp"
#include "s3im/scene.hpp"
#include "s3im/tensor.hpp"
#include "s3im/train.hpp"
