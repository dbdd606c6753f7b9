#include "af/conv_gemm.h"
