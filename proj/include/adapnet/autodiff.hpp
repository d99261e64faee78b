#pragma once
#include <Eigen/Dense>
#include <functional>
#include <vector>

namespace adapnet::ad {

using Mat = Eigen::MatrixXd;

class Tape;

// Handle to a node on the tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;
};

// Reverse-mode tape over dense double matrices. Nodes are created in
// topological order; backward() walks them in reverse.
class Tape {
 public:
  int add(Mat value, std::function<void(Tape&)> backward = nullptr);
  void set_backward(int id, std::function<void(Tape&)> backward);

  const Mat& value(int id) const { return nodes_[id].value; }
  const Mat& value(Var v) const { return nodes_[v.id].value; }

  // Gradient accumulator; zero-sized until touched during backward.
  Mat& grad(int id);
  const Mat& grad(Var v) { return grad(v.id); }

  // Seeds d(root)/d(root) = 1 (root must be 1x1) and propagates.
  void backward(Var root);

  void clear();
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    std::function<void(Tape&)> backward;
  };
  std::vector<Node> nodes_;
};

// Leaf node (input or parameter).
Var leaf(Tape& t, Mat value);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var cmul(Var a, Var b);                 // elementwise product
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
Var matmul(Var a, Var b);
Var transpose(Var a);
Var vstack(Var a, Var b);
Var tanh_(Var a);
Var sigmoid_(Var a);
Var log_(Var a);                        // requires strictly positive entries
Var log_guarded(Var a, double eps);     // log(a + eps)
Var softmax_vec(Var a);                 // softmax over all entries, keeps shape
Var sum_all(Var a);                     // 1x1
Var dot(Var a, Var b);                  // 1x1, sum of elementwise products
Var sqnorm(Var a);                      // squared Frobenius norm, 1x1
Var add_col_broadcast(Var x, Var bias); // bias is n x 1, added to every column

// Temporal ops; rows are channels, columns are frames.
// Kernel layout: Cout x (Cin * k), tap t occupying columns [t*Cin, (t+1)*Cin).
Var conv1d_same(Var x, Var w, Var bias, int k);
Var conv1d_stride2(Var x, Var w, Var bias, int k);  // output length ceil(m/2)
Var maxpool1d_same(Var x, int window);              // stride 1, edge truncation
Var upsample2_crop(Var x, int target_cols);         // nearest duplication

double scalar(Var v);

}  // namespace adapnet::ad
