#pragma once

#include <optional>
#include <vector>

#include "sketchgrad/common.hpp"
#include "sketchgrad/compression.hpp"
#include "sketchgrad/problems.hpp"
#include "sketchgrad/rng.hpp"

namespace sketchgrad {

enum class FederatedKind { FedGd, Qgd, Marina, Ef21 };

inline const char* federated_name(FederatedKind k) {
  switch (k) {
    case FederatedKind::FedGd: return "fed-gd";
    case FederatedKind::Qgd: return "qgd";
    case FederatedKind::Marina: return "marina";
    case FederatedKind::Ef21: return "ef21";
  }
  return "?";
}

// Simulated M clients over a partitioned problem. Clients run sequentially
// inside a round in fixed order; each owns an independent compressor RNG
// stream, so traces are deterministic.
struct FederatedState {
  FederatedKind kind = FederatedKind::FedGd;
  std::vector<Problem> clients;
  std::vector<Compressor> compressors;
  std::vector<RngStream> compressor_rng;
  std::vector<Matrix> g_client;  // per-client states (marina / ef21)
  Matrix g;                      // server-side base estimator
  double sync_prob_q = 1.0;      // marina
  double comm_scalars_total = 0.0;
  double g0_gap = 0.0;  // (1/M) sum_l ||G_l^0 - grad f_l(W^0)||_F^2

  int client_count() const { return static_cast<int>(clients.size()); }
  Index dim() const { return clients.empty() ? 0 : clients[0].param_size(); }
};

inline FederatedState init_federated(FederatedKind kind, std::vector<Problem> clients,
                                     const Compressor& compressor, const Matrix& w0,
                                     const RngBundle& bundle, double sync_prob_q = 1.0,
                                     const std::optional<std::vector<Matrix>>& g0 = std::nullopt) {
  require(!clients.empty(), "federated: need at least one client");
  Index d = clients[0].param_size();
  compressor.validate(d);
  if (kind == FederatedKind::Qgd || kind == FederatedKind::Marina) {
    if (!compressor.is_unbiased())
      throw ConfigError(std::string(federated_name(kind)) +
                        " requires an unbiased compressor");
  }
  if (kind == FederatedKind::Ef21) {
    if (!compressor.is_contractive())
      throw ConfigError("ef21 requires a contractive compressor");
  }
  if (kind == FederatedKind::Marina)
    require(sync_prob_q > 0.0 && sync_prob_q <= 1.0, "marina: q must lie in (0, 1]");

  FederatedState st;
  st.kind = kind;
  st.sync_prob_q = sync_prob_q;
  int m = static_cast<int>(clients.size());
  st.clients = std::move(clients);
  st.compressors.assign(m, compressor);
  for (int l = 0; l < m; ++l)
    st.compressor_rng.push_back(bundle.make_stream("compressor/" + std::to_string(l)));

  if (kind == FederatedKind::Marina || kind == FederatedKind::Ef21) {
    st.g_client.resize(m);
    for (int l = 0; l < m; ++l)
      st.g_client[l] = g0 ? (*g0)[l] : st.clients[l].gradient(w0);
    st.g = st.g_client[0];
    for (int l = 1; l < m; ++l) st.g += st.g_client[l];
    st.g /= m;
    for (int l = 0; l < m; ++l)
      st.g0_gap += (st.g_client[l] - st.clients[l].gradient(w0)).squaredNorm();
    st.g0_gap /= m;
    // initial states correspond to one full synchronization
    st.comm_scalars_total += static_cast<double>(m) * d;
  } else {
    st.g = Matrix::Zero(w0.rows(), w0.cols());
  }
  return st;
}

// G^t = (1/M) sum_l grad f_l(W^t), the uncompressed baseline. Counts d
// scalars per client.
inline const Matrix& fed_gd_round(FederatedState& st, const Matrix& w) {
  Matrix acc = st.clients[0].gradient(w);
  for (int l = 1; l < st.client_count(); ++l) acc += st.clients[l].gradient(w);
  st.g = acc / st.client_count();
  st.comm_scalars_total += static_cast<double>(st.client_count()) * st.dim();
  return st.g;
}

// G^t = (1/M) sum_l Q_l(grad f_l(W^t)); fresh compression every round keeps
// the estimator unbiased.
inline const Matrix& qgd_round(FederatedState& st, const Matrix& w) {
  if (st.kind != FederatedKind::Qgd && st.kind != FederatedKind::FedGd)
    throw ConfigError("qgd_round called on a non-qgd state");
  if (st.kind == FederatedKind::FedGd) return fed_gd_round(st, w);
  Matrix acc = Matrix::Zero(w.rows(), w.cols());
  for (int l = 0; l < st.client_count(); ++l) {
    Matrix grad = st.clients[l].gradient(w);
    if (st.compressors[l].kind == CompressorKind::Identity)
      acc += grad;  // identity short-circuit keeps traces equal to fed-gd
    else
      acc += compress(st.compressors[l], grad, st.compressor_rng[l]);
    st.comm_scalars_total += comm_scalars(st.compressors[l], st.dim());
  }
  st.g = acc / st.client_count();
  return st.g;
}

// One shared coin s^t ~ Be(q) per round, drawn before the client loop: all
// clients either send full gradients (d scalars each) or compressed
// differences.
inline const Matrix& marina_round(FederatedState& st, const Matrix& w_new,
                                  const Matrix& w_old, RngStream& coin_rng) {
  if (st.kind != FederatedKind::Marina) throw ConfigError("marina_round on a non-marina state");
  bool full_sync = coin_rng.bernoulli(st.sync_prob_q);
  for (int l = 0; l < st.client_count(); ++l) {
    if (full_sync) {
      st.g_client[l] = st.clients[l].gradient(w_new);
      st.comm_scalars_total += static_cast<double>(st.dim());
    } else {
      if (st.compressors[l].kind == CompressorKind::Identity) {
        // differences telescope exactly under the identity compressor
        st.g_client[l] = st.clients[l].gradient(w_new);
      } else {
        Matrix diff = st.clients[l].gradient(w_new) - st.clients[l].gradient(w_old);
        st.g_client[l] += compress(st.compressors[l], diff, st.compressor_rng[l]);
      }
      st.comm_scalars_total += comm_scalars(st.compressors[l], st.dim());
    }
  }
  Matrix acc = st.g_client[0];
  for (int l = 1; l < st.client_count(); ++l) acc += st.g_client[l];
  st.g = acc / st.client_count();
  return st.g;
}

// G_l^{t+1} = G_l^t + C_l(grad f_l(W^{t+1}) - G_l^t); deterministic for
// top-k compressors.
inline const Matrix& ef21_round(FederatedState& st, const Matrix& w_new) {
  if (st.kind != FederatedKind::Ef21) throw ConfigError("ef21_round on a non-ef21 state");
  for (int l = 0; l < st.client_count(); ++l) {
    Matrix grad = st.clients[l].gradient(w_new);
    if (st.compressors[l].kind == CompressorKind::Identity) {
      st.g_client[l] = std::move(grad);  // exact: C = id absorbs the whole correction
    } else {
      st.g_client[l] += compress(st.compressors[l], grad - st.g_client[l],
                                 st.compressor_rng[l]);
    }
    st.comm_scalars_total += comm_scalars(st.compressors[l], st.dim());
  }
  Matrix acc = st.g_client[0];
  for (int l = 1; l < st.client_count(); ++l) acc += st.g_client[l];
  st.g = acc / st.client_count();
  return st.g;
}

// (1/M) sum_l ||G_l - grad f_l(W)||_F^2 (the EF21 Lyapunov gap term)
inline double client_gap_mean(const FederatedState& st, const Matrix& w) {
  if (st.g_client.empty()) return 0.0;
  double acc = 0.0;
  for (int l = 0; l < st.client_count(); ++l)
    acc += (st.g_client[l] - st.clients[l].gradient(w)).squaredNorm();
  return acc / st.client_count();
}

}  // namespace sketchgrad
