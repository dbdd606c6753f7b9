#ifndef AF_PIPELINE_H
#define AF_PIPELINE_H
#include "af/ir.h"
#endif
