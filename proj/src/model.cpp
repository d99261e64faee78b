#include "adapnet/model.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace adapnet {

void ModelConfig::validate() const {
  if (d < 1 || d_f < 1 || b < 1 || C < 1)
    throw std::invalid_argument("ModelConfig: dimensions must be positive");
}

namespace {

void collect(EncoderBranch& e, const std::string& prefix,
             std::vector<std::pair<std::string, Mat*>>& out) {
  out.push_back({prefix + ".conv1.w", &e.conv1_w});
  out.push_back({prefix + ".conv1.b", &e.conv1_b});
  out.push_back({prefix + ".conv2.w", &e.conv2_w});
  out.push_back({prefix + ".conv2.b", &e.conv2_b});
  out.push_back({prefix + ".conv3.w", &e.conv3_w});
  out.push_back({prefix + ".conv3.b", &e.conv3_b});
  out.push_back({prefix + ".fc.w", &e.fc_w});
  out.push_back({prefix + ".fc.b", &e.fc_b});
}

}  // namespace

std::vector<std::pair<std::string, Mat*>> StreamParams::tensors() {
  std::vector<std::pair<std::string, Mat*>> out;
  collect(enc_shared, "enc_shared", out);
  collect(enc_private_t, "enc_private_t", out);
  collect(enc_private_u, "enc_private_u", out);
  out.push_back({"attn_shared.w1", &attn_shared.w1});
  out.push_back({"attn_shared.w2", &attn_shared.w2});
  out.push_back({"attn_private_t.w1", &attn_private_t.w1});
  out.push_back({"attn_private_t.w2", &attn_private_t.w2});
  out.push_back({"attn_private_u.w1", &attn_private_u.w1});
  out.push_back({"attn_private_u.w2", &attn_private_u.w2});
  out.push_back({"decoder.fc.w", &decoder.fc_w});
  out.push_back({"decoder.fc.b", &decoder.fc_b});
  out.push_back({"decoder.conv1.w", &decoder.conv1_w});
  out.push_back({"decoder.conv1.b", &decoder.conv1_b});
  out.push_back({"decoder.conv2.w", &decoder.conv2_w});
  out.push_back({"decoder.conv2.b", &decoder.conv2_b});
  out.push_back({"decoder.conv3.w", &decoder.conv3_w});
  out.push_back({"decoder.conv3.b", &decoder.conv3_b});
  out.push_back({"decoder.conv4.w", &decoder.conv4_w});
  out.push_back({"decoder.conv4.b", &decoder.conv4_b});
  out.push_back({"decoder.proj.w", &decoder.proj_w});
  out.push_back({"decoder.proj.b", &decoder.proj_b});
  out.push_back({"classifier.shared.w", &classifier.shared_w});
  out.push_back({"classifier.shared.b", &classifier.shared_b});
  out.push_back({"classifier.private_t.w", &classifier.private_t_w});
  out.push_back({"classifier.private_t.b", &classifier.private_t_b});
  out.push_back({"classifier.private_u.w", &classifier.private_u_w});
  out.push_back({"classifier.private_u.b", &classifier.private_u_b});
  return out;
}

std::vector<std::pair<std::string, const Mat*>> StreamParams::tensors() const {
  auto mut = const_cast<StreamParams*>(this)->tensors();
  std::vector<std::pair<std::string, const Mat*>> out;
  out.reserve(mut.size());
  for (auto& [n, p] : mut) out.push_back({n, p});
  return out;
}

const EncoderBranch& StreamParams::encoder(Branch b) const {
  switch (b) {
    case Branch::Shared: return enc_shared;
    case Branch::PrivateTrimmed: return enc_private_t;
    default: return enc_private_u;
  }
}

const AttentionBlock& StreamParams::attention(Branch b) const {
  switch (b) {
    case Branch::Shared: return attn_shared;
    case Branch::PrivateTrimmed: return attn_private_t;
    default: return attn_private_u;
  }
}

bool StreamParams::all_finite() const {
  for (const auto& [name, t] : tensors())
    if (!t->allFinite()) return false;
  return true;
}

namespace {

Mat uniform_fan_in(int rows, int cols, int fan_in, Rng& rng) {
  const double bound = std::sqrt(1.0 / fan_in);
  Mat m(rows, cols);
  for (int j = 0; j < cols; ++j)
    for (int i = 0; i < rows; ++i) m(i, j) = rng.uniform(-bound, bound);
  return m;
}

EncoderBranch init_encoder(const ModelConfig& c, Rng& rng) {
  EncoderBranch e;
  const int k = ModelConfig::kernel;
  e.conv1_w = uniform_fan_in(c.d_f, c.d * k, c.d * k, rng);
  e.conv1_b = Mat::Zero(c.d_f, 1);
  e.conv2_w = uniform_fan_in(c.d_f, c.d_f * k, c.d_f * k, rng);
  e.conv2_b = Mat::Zero(c.d_f, 1);
  e.conv3_w = uniform_fan_in(c.d_f, c.d_f * k, c.d_f * k, rng);
  e.conv3_b = Mat::Zero(c.d_f, 1);
  e.fc_w = uniform_fan_in(c.d_f, c.d_f, c.d_f, rng);
  e.fc_b = Mat::Zero(c.d_f, 1);
  return e;
}

AttentionBlock init_attention(const ModelConfig& c, Rng& rng) {
  AttentionBlock a;
  a.w1 = uniform_fan_in(c.b, c.d_f, c.d_f, rng);
  a.w2 = uniform_fan_in(1, c.b, c.b, rng);
  return a;
}

DecoderParams init_decoder(const ModelConfig& c, Rng& rng) {
  DecoderParams d;
  const int k = ModelConfig::kernel;
  d.fc_w = uniform_fan_in(c.d_f, 2 * c.d_f, 2 * c.d_f, rng);
  d.fc_b = Mat::Zero(c.d_f, 1);
  auto conv = [&](Mat& w, Mat& b) {
    w = uniform_fan_in(c.d_f, c.d_f * k, c.d_f * k, rng);
    b = Mat::Zero(c.d_f, 1);
  };
  conv(d.conv1_w, d.conv1_b);
  conv(d.conv2_w, d.conv2_b);
  conv(d.conv3_w, d.conv3_b);
  conv(d.conv4_w, d.conv4_b);
  d.proj_w = uniform_fan_in(c.d, c.d_f, c.d_f, rng);
  d.proj_b = Mat::Zero(c.d, 1);
  return d;
}

ClassifierParams init_classifier(const ModelConfig& c, Rng& rng) {
  ClassifierParams p;
  p.shared_w = uniform_fan_in(c.C, c.d_f, c.d_f, rng);
  p.shared_b = Mat::Zero(c.C, 1);
  p.private_t_w = uniform_fan_in(c.C, c.d_f, c.d_f, rng);
  p.private_t_b = Mat::Zero(c.C, 1);
  p.private_u_w = uniform_fan_in(c.C, c.d_f, c.d_f, rng);
  p.private_u_b = Mat::Zero(c.C, 1);
  return p;
}

}  // namespace

StreamParams init_stream_params(const ModelConfig& config, Rng& rng) {
  config.validate();
  StreamParams p;
  p.config = config;
  p.enc_shared = init_encoder(config, rng);
  p.enc_private_t = init_encoder(config, rng);
  p.enc_private_u = init_encoder(config, rng);
  p.attn_shared = init_attention(config, rng);
  p.attn_private_t = init_attention(config, rng);
  p.attn_private_u = init_attention(config, rng);
  p.decoder = init_decoder(config, rng);
  p.classifier = init_classifier(config, rng);
  return p;
}

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  Rng rng(seed);
  ModelParams m;
  Rng r1 = rng.fork(0), r2 = rng.fork(1);
  m.rgb = init_stream_params(config, r1);
  m.flow = init_stream_params(config, r2);
  return m;
}

// ---------------------------------------------------------------------------
// checkpoint

namespace {
constexpr char kCkptMagic[4] = {'A', 'D', 'P', 'C'};
constexpr std::uint32_t kCkptVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), 4);
}
std::uint32_t read_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  return v;
}

void write_stream_params(std::ostream& os, const StreamParams& p) {
  auto ts = p.tensors();
  write_u32(os, static_cast<std::uint32_t>(ts.size()));
  for (const auto& [name, t] : ts) {
    write_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(os, static_cast<std::uint32_t>(t->rows()));
    write_u32(os, static_cast<std::uint32_t>(t->cols()));
    os.write(reinterpret_cast<const char*>(t->data()),
             static_cast<std::streamsize>(sizeof(double)) * t->size());
  }
}

void read_stream_params(std::istream& is, StreamParams& p) {
  auto ts = p.tensors();
  const std::uint32_t n = read_u32(is);
  if (n != ts.size())
    throw std::runtime_error("checkpoint: tensor count mismatch");
  for (auto& [name, t] : ts) {
    const std::uint32_t len = read_u32(is);
    std::string got(len, '\0');
    is.read(got.data(), len);
    if (got != name)
      throw std::runtime_error("checkpoint: expected tensor " + name +
                               ", found " + got);
    const std::uint32_t rows = read_u32(is), cols = read_u32(is);
    t->resize(rows, cols);
    is.read(reinterpret_cast<char*>(t->data()),
            static_cast<std::streamsize>(sizeof(double)) * t->size());
    if (!is) throw std::runtime_error("checkpoint: truncated tensor " + name);
  }
}

}  // namespace

void save_checkpoint(const ModelParams& params,
                     const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os)
    throw std::runtime_error("cannot write checkpoint: " + path.string());
  os.write(kCkptMagic, 4);
  write_u32(os, kCkptVersion);
  const ModelConfig& c = params.rgb.config;
  write_u32(os, static_cast<std::uint32_t>(c.d));
  write_u32(os, static_cast<std::uint32_t>(c.d_f));
  write_u32(os, static_cast<std::uint32_t>(c.b));
  write_u32(os, static_cast<std::uint32_t>(c.C));
  write_stream_params(os, params.rgb);
  write_stream_params(os, params.flow);
  if (!os) throw std::runtime_error("checkpoint write failed");
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is)
    throw std::runtime_error("cannot open checkpoint: " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kCkptMagic, 4) != 0)
    throw std::runtime_error("bad checkpoint magic: " + path.string());
  if (read_u32(is) != kCkptVersion)
    throw std::runtime_error("unsupported checkpoint version");
  ModelConfig c;
  c.d = static_cast<int>(read_u32(is));
  c.d_f = static_cast<int>(read_u32(is));
  c.b = static_cast<int>(read_u32(is));
  c.C = static_cast<int>(read_u32(is));
  c.validate();
  ModelParams m;
  // shapes come from an init pass; payload overwrites values
  m = init_params(c, 0);
  read_stream_params(is, m.rgb);
  read_stream_params(is, m.flow);
  return m;
}

// ---------------------------------------------------------------------------
// forward graph

StreamGraph::StreamGraph(ad::Tape& tape, const StreamParams& params)
    : tape_(&tape), params_(&params) {
  for (const auto& [name, t] : params.tensors()) {
    param_ptrs_.push_back(t);
    param_vars_.push_back(ad::leaf(tape, *t));
  }
}

ad::Var StreamGraph::pv(const Mat* tensor) const {
  for (std::size_t i = 0; i < param_ptrs_.size(); ++i)
    if (param_ptrs_[i] == tensor) return param_vars_[i];
  throw std::logic_error("StreamGraph: tensor not registered");
}

ad::Var StreamGraph::encode(ad::Var x, Branch branch) const {
  const EncoderBranch& e = params_->encoder(branch);
  const int k = ModelConfig::kernel;
  const int w = ModelConfig::pool_window;
  if (tape_->value(x).rows() != params_->config.d)
    throw std::invalid_argument("encode: input dimension mismatch");
  ad::Var h = x;
  h = ad::maxpool1d_same(ad::tanh_(ad::conv1d_same(h, pv(&e.conv1_w),
                                                   pv(&e.conv1_b), k)), w);
  h = ad::maxpool1d_same(ad::tanh_(ad::conv1d_same(h, pv(&e.conv2_w),
                                                   pv(&e.conv2_b), k)), w);
  h = ad::maxpool1d_same(ad::tanh_(ad::conv1d_same(h, pv(&e.conv3_w),
                                                   pv(&e.conv3_b), k)), w);
  // per-frame affine tail
  h = ad::add_col_broadcast(ad::matmul(pv(&e.fc_w), h), pv(&e.fc_b));
  return h;
}

std::pair<ad::Var, ad::Var> StreamGraph::attend(ad::Var f,
                                                Branch branch) const {
  const AttentionBlock& blk = params_->attention(branch);
  ad::Var z = ad::matmul(pv(&blk.w2), ad::tanh_(ad::matmul(pv(&blk.w1), f)));
  ad::Var a = ad::transpose(ad::softmax_vec(z));  // m x 1
  ad::Var h = ad::matmul(f, a);                   // d_f x 1
  return {a, h};
}

ad::Var StreamGraph::decode(ad::Var f_s, ad::Var f_p) const {
  const DecoderParams& d = params_->decoder;
  const int k = ModelConfig::kernel;
  const int m = static_cast<int>(tape_->value(f_s).cols());
  if (tape_->value(f_p).cols() != m)
    throw std::invalid_argument("decode: temporal length mismatch");
  ad::Var h = ad::vstack(f_s, f_p);  // 2 d_f x m
  h = ad::add_col_broadcast(ad::matmul(pv(&d.fc_w), h), pv(&d.fc_b));
  h = ad::tanh_(ad::conv1d_same(h, pv(&d.conv1_w), pv(&d.conv1_b), k));
  h = ad::tanh_(ad::conv1d_stride2(h, pv(&d.conv2_w), pv(&d.conv2_b), k));
  h = ad::upsample2_crop(h, m);
  h = ad::tanh_(ad::conv1d_same(h, pv(&d.conv3_w), pv(&d.conv3_b), k));
  h = ad::tanh_(ad::conv1d_same(h, pv(&d.conv4_w), pv(&d.conv4_b), k));
  h = ad::add_col_broadcast(ad::matmul(pv(&d.proj_w), h), pv(&d.proj_b));
  return h;
}

ad::Var StreamGraph::classify(ad::Var h_s, ad::Var h_p, Domain domain) const {
  const ClassifierParams& c = params_->classifier;
  const Mat* w_p =
      domain == Domain::Trimmed ? &c.private_t_w : &c.private_u_w;
  const Mat* b_p =
      domain == Domain::Trimmed ? &c.private_t_b : &c.private_u_b;
  ad::Var shared = ad::add_col_broadcast(ad::matmul(pv(&c.shared_w), h_s),
                                         pv(&c.shared_b));
  ad::Var priv = ad::add_col_broadcast(ad::matmul(pv(w_p), h_p), pv(b_p));
  return ad::softmax_vec(ad::add(shared, priv));
}

// ---------------------------------------------------------------------------
// plain-value wrappers

Mat to_double(const Eigen::MatrixXf& m) { return m.cast<double>(); }

Mat encode(const FeatureMatrix& x, Branch branch, const StreamParams& params) {
  ad::Tape t;
  StreamGraph g(t, params);
  return t.value(g.encode(ad::leaf(t, to_double(x.values)), branch));
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> attend(
    const Mat& f, const AttentionBlock& block) {
  if (block.w1.cols() != f.rows())
    throw std::invalid_argument("attend: dimension mismatch");
  ad::Tape t;
  ad::Var fv = ad::leaf(t, f);
  ad::Var z = ad::matmul(ad::leaf(t, block.w2),
                         ad::tanh_(ad::matmul(ad::leaf(t, block.w1), fv)));
  ad::Var a = ad::transpose(ad::softmax_vec(z));
  ad::Var h = ad::matmul(fv, a);
  return {t.value(a).col(0), t.value(h).col(0)};
}

Mat decode(const Mat& f_s, const Mat& f_p, const StreamParams& params) {
  ad::Tape t;
  StreamGraph g(t, params);
  return t.value(g.decode(ad::leaf(t, f_s), ad::leaf(t, f_p)));
}

Eigen::VectorXd classify(const Eigen::VectorXd& h_s,
                         const Eigen::VectorXd& h_p, Domain domain,
                         const StreamParams& params) {
  ad::Tape t;
  StreamGraph g(t, params);
  ad::Var p = g.classify(ad::leaf(t, h_s), ad::leaf(t, h_p), domain);
  return t.value(p).col(0);
}

}  // namespace adapnet
