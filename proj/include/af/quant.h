#ifndef AF_QUANT_H
#define AF_QUANT_H
#include "af/ir.h"
#endif
