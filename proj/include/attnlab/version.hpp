#pragma once

#define ATTNLAB_VERSION "0.1.0"
