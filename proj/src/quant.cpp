#include "af/quant.h"
