#include "af/pipeline.h"
