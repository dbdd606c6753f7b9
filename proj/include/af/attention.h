#ifndef AF_ATTENTION_H
#define AF_ATTENTION_H
#include "af/ir.h"
#endif
