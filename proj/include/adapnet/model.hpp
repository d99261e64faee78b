#pragma once
#include <Eigen/Dense>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "adapnet/autodiff.hpp"
#include "adapnet/corpus.hpp"
#include "adapnet/rng.hpp"

namespace adapnet {

using Mat = Eigen::MatrixXd;

enum class Branch { Shared, PrivateTrimmed, PrivateUntrimmed };
enum class Domain { Trimmed, Untrimmed };

struct ModelConfig {
  int d = 16;    // input feature dimension
  int d_f = 8;   // decomposed feature dimension
  int b = 4;     // attention hidden size
  int C = 2;     // class count
  static constexpr int kernel = 3;
  static constexpr int pool_window = 3;

  void validate() const;
};

// Three same-padded temporal conv layers (tanh + stride-1 max pooling)
// and a per-frame affine tail; temporal length is preserved for any m.
struct EncoderBranch {
  Mat conv1_w, conv1_b;  // d_f x (d * kernel), d_f x 1
  Mat conv2_w, conv2_b;  // d_f x (d_f * kernel)
  Mat conv3_w, conv3_b;
  Mat fc_w, fc_b;        // d_f x d_f
};

struct AttentionBlock {
  Mat w1;  // b x d_f
  Mat w2;  // 1 x b
};

struct DecoderParams {
  Mat fc_w, fc_b;          // d_f x (2 d_f)
  Mat conv1_w, conv1_b;    // stride 1
  Mat conv2_w, conv2_b;    // stride 2, then x2 upsample + crop
  Mat conv3_w, conv3_b;
  Mat conv4_w, conv4_b;
  Mat proj_w, proj_b;      // d x d_f
};

struct ClassifierParams {
  Mat shared_w, shared_b;       // C x d_f
  Mat private_t_w, private_t_b;
  Mat private_u_w, private_u_b;
};

// All learnable state for one stream (RGB or FLOW).
struct StreamParams {
  ModelConfig config;
  EncoderBranch enc_shared, enc_private_t, enc_private_u;
  AttentionBlock attn_shared, attn_private_t, attn_private_u;
  DecoderParams decoder;
  ClassifierParams classifier;

  std::vector<std::pair<std::string, Mat*>> tensors();
  std::vector<std::pair<std::string, const Mat*>> tensors() const;
  const EncoderBranch& encoder(Branch b) const;
  const AttentionBlock& attention(Branch b) const;
  bool all_finite() const;
};

struct ModelParams {
  StreamParams rgb, flow;
  StreamParams& stream(Stream s) { return s == Stream::RGB ? rgb : flow; }
  const StreamParams& stream(Stream s) const {
    return s == Stream::RGB ? rgb : flow;
  }
};

StreamParams init_stream_params(const ModelConfig& config, Rng& rng);
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

// Checkpoint container; bit-exact round trip.
void save_checkpoint(const ModelParams& params,
                     const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

// Differentiable forward graph over one stream's parameters. Parameter
// leaves are registered once per tape so gradients can be read back in
// tensors() order.
class StreamGraph {
 public:
  StreamGraph(ad::Tape& tape, const StreamParams& params);

  ad::Var encode(ad::Var x, Branch branch) const;
  // returns {a (m x 1 simplex), h (d_f x 1)}
  std::pair<ad::Var, ad::Var> attend(ad::Var f, Branch branch) const;
  ad::Var decode(ad::Var f_s, ad::Var f_p) const;
  // probability vector, C x 1
  ad::Var classify(ad::Var h_s, ad::Var h_p, Domain domain) const;

  const std::vector<ad::Var>& param_vars() const { return param_vars_; }
  ad::Tape& tape() const { return *tape_; }

 private:
  ad::Var pv(const Mat* tensor) const;
  ad::Tape* tape_;
  const StreamParams* params_;
  std::vector<const Mat*> param_ptrs_;
  std::vector<ad::Var> param_vars_;
};

// Plain-value conveniences (build a throwaway tape internally).
Mat encode(const FeatureMatrix& x, Branch branch, const StreamParams& params);
std::pair<Eigen::VectorXd, Eigen::VectorXd> attend(const Mat& f,
                                                   const AttentionBlock& block);
Mat decode(const Mat& f_s, const Mat& f_p, const StreamParams& params);
Eigen::VectorXd classify(const Eigen::VectorXd& h_s,
                         const Eigen::VectorXd& h_p, Domain domain,
                         const StreamParams& params);

Mat to_double(const Eigen::MatrixXf& m);

}  // namespace adapnet
