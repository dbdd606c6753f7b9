#ifndef AF_CONV_GEMM_H
#define AF_CONV_GEMM_H
#include "af/ir.h"
#endif
