#include "af/attention.h"
