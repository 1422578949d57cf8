#pragma once

namespace rclp {

/// Caps OpenMP workers for subsequent kernels. n <= 0 restores the runtime default.
void set_num_threads(int n);
int num_threads();

}  // namespace rclp
