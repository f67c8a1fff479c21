#include "cmr/pipeline.hpp"

// Implementation lands with the trainer; this keeps the target linking.
namespace cmr {}
