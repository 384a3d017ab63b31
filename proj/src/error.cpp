#include "attmix/error.hpp"

namespace attmix {

std::string_view category_name(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::kDimension: return "dimension";
    case ErrorCategory::kValidation: return "validation";
    case ErrorCategory::kFormat: return "format";
    case ErrorCategory::kContract: return "contract";
    case ErrorCategory::kConfig: return "config";
    case ErrorCategory::kPrerequisite: return "prerequisite";
    case ErrorCategory::kSchema: return "schema";
    case ErrorCategory::kTraining: return "training";
    case ErrorCategory::kIo: return "io";
  }
  return "unknown";
}

int category_exit_code(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::kDimension: return 10;
    case ErrorCategory::kValidation: return 11;
    case ErrorCategory::kFormat: return 12;
    case ErrorCategory::kContract: return 13;
    case ErrorCategory::kConfig: return 14;
    case ErrorCategory::kPrerequisite: return 15;
    case ErrorCategory::kSchema: return 16;
    case ErrorCategory::kTraining: return 17;
    case ErrorCategory::kIo: return 18;
  }
  return 1;
}

}  // namespace attmix
