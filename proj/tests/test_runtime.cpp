#include <gtest/gtest.h>

#include <future>

#include "test_support.hpp"

namespace salted {
namespace {

using namespace std::chrono_literals;
using testing::random_tensor;
using Bytes = std::vector<std::uint8_t>;

struct Fixture {
  SaltedNetwork net;
  ModelPart early, later;
  std::unique_ptr<InferenceServer> server;

  explicit Fixture(SaltedNetwork n, ServerOptions opts = {}) : net(std::move(n)) {
    std::tie(early, later) = partition(net);
    opts.bind = {"127.0.0.1", 0};
    server = std::make_unique<InferenceServer>(later, opts);
    server->start();
  }
  Endpoint endpoint() const { return {"127.0.0.1", server->port()}; }
};

Socket raw_connect(const Endpoint& ep) { return detail::connect_to(ep, 2s); }

std::optional<wire::WireMessage> read_reply(const Socket& s) {
  return detail::read_frame(s.fd(), wire::kMaxPayload);
}

TEST(Endpoint, Parse) {
  const Endpoint e = parse_endpoint("localhost:9400");
  EXPECT_EQ(e.host, "localhost");
  EXPECT_EQ(e.port, 9400);
  EXPECT_EQ(parse_endpoint("[::1]:80").host, "::1");
  for (const char* bad : {"nohost", "host:", "host:70000", "host:12x"}) EXPECT_THROW(parse_endpoint(bad), Error) << bad;
}

TEST(Server, HandleIsPure) {
  Fixture f(make_blobs_mlp(8, 4, 4, 2));
  Rng rng(1);
  const Tensorf z = random_tensor<float>({32}, rng);
  const auto reply = f.server->handle(wire::make_request(z));
  ASSERT_EQ(reply.type, wire::MessageType::InferResponse);
  EXPECT_TRUE(wire::decode_tensor(reply.payload).identical(forward_later(f.later, z)));

  const auto wrong_type = f.server->handle({wire::MessageType::InferResponse, wire::encode_tensor(z)});
  EXPECT_EQ(wire::decode_error(wrong_type.payload).code, 2);
  const auto garbage = f.server->handle({wire::MessageType::InferRequest, {1, 2, 3}});
  EXPECT_EQ(wire::decode_error(garbage.payload).code, 2);
  const auto shape = f.server->handle(wire::make_request(Tensorf({31})));
  EXPECT_EQ(wire::decode_error(shape.payload).code, 1);
}

TEST(Loopback, MatchesLocalForwardBitwise) {
  for (SaltedNetwork net : {make_blobs_mlp(8, 4, 4, 3), make_patterns_cnn(1, 4, 4, 3)}) {
    Fixture f(std::move(net));
    InferenceClient client(f.endpoint());
    Rng rng(2);
    const Shape in = validate(f.net);
    for (int i = 0; i < 25; ++i) {
      const Tensorf x = random_tensor<float>(in, rng, -2, 2);
      const std::size_t s = rng.below(f.net.salts());
      const SplitInference r = client_infer(f.early, x, s, client);
      const Tensorf local = forward_salted(f.net, x, s);
      ASSERT_TRUE(r.salted_probs.identical(local));
      EXPECT_TRUE(r.decoded_probs.identical(f.net.mapping.unpermute_output(s, local)));
      EXPECT_EQ(r.decoded_class, f.net.mapping.unmap_label(s, argmax<float>(local.values())));
      EXPECT_GE(r.latency_ms, 0.0);
    }
  }
}

TEST(Loopback, WrongShapeGetsErrorAndSessionSurvives) {
  Fixture f(make_blobs_mlp(8, 4, 4, 4));
  InferenceClient client(f.endpoint());
  try {
    client.infer(Tensorf({7}));
    FAIL();
  } catch (const ServerError& e) {
    EXPECT_EQ(e.server_code(), 1);
    EXPECT_NE(e.text().find("[32]"), std::string::npos) << e.text();
  }
  Rng rng(3);
  const Tensorf z = random_tensor<float>({32}, rng);
  EXPECT_TRUE(client.infer(z).identical(forward_later(f.later, z)));
  EXPECT_TRUE(f.server->running());
}

TEST(Loopback, GarbageClosesOnlyThatSession) {
  Fixture f(make_blobs_mlp(8, 4, 4, 5));
  {
    const Socket s = raw_connect(f.endpoint());
    const Bytes junk = {'G', 'A', 'R', 'B', 'A', 'G', 'E', '!', '!', '!', 1, 2, 3};
    detail::write_all(s.fd(), junk);
    const auto reply = read_reply(s);
    ASSERT_TRUE(reply);
    EXPECT_EQ(reply->type, wire::MessageType::Error);
    EXPECT_EQ(wire::decode_error(reply->payload).code, 2);
    EXPECT_FALSE(read_reply(s).has_value());  // server closed the session
  }
  InferenceClient client(f.endpoint());
  Rng rng(4);
  const Tensorf z = random_tensor<float>({32}, rng);
  EXPECT_TRUE(client.infer(z).identical(forward_later(f.later, z)));
}

TEST(Loopback, UnknownVersionIsSkipped) {
  Fixture f(make_blobs_mlp(8, 4, 4, 6));
  const Socket s = raw_connect(f.endpoint());
  const Bytes future = {'S', 'A', 'L', 'T', 9, 1, 3, 0, 0, 0, 0xAA, 0xBB, 0xCC};
  detail::write_all(s.fd(), future);
  auto reply = read_reply(s);
  ASSERT_TRUE(reply);
  EXPECT_EQ(wire::decode_error(reply->payload).code, 2);

  Rng rng(5);
  const Tensorf z = random_tensor<float>({32}, rng);
  detail::write_all(s.fd(), wire::encode_message(wire::make_request(z)));
  reply = read_reply(s);
  ASSERT_TRUE(reply);
  ASSERT_EQ(reply->type, wire::MessageType::InferResponse);
  EXPECT_TRUE(wire::decode_tensor(reply->payload).identical(forward_later(f.later, z)));
}

TEST(Loopback, OversizedFrameRejected) {
  ServerOptions opts;
  opts.max_payload = 1024;
  Fixture f(make_blobs_mlp(8, 4, 4, 7), opts);
  const Socket s = raw_connect(f.endpoint());
  const Bytes huge = {'S', 'A', 'L', 'T', 1, 1, 0x00, 0x10, 0x00, 0x00};
  detail::write_all(s.fd(), huge);
  const auto reply = read_reply(s);
  ASSERT_TRUE(reply);
  EXPECT_EQ(wire::decode_error(reply->payload).code, 2);
  EXPECT_FALSE(read_reply(s).has_value());
}

TEST(Client, ConnectFailed) {
  std::uint16_t port = 0;
  {
    // Reserve then release a port so nothing listens on it.
    InferenceServer probe(partition(make_blobs_mlp(8, 4, 4, 1)).second, {{"127.0.0.1", 0}});
    probe.start();
    port = probe.port();
  }
  try {
    InferenceClient client({"127.0.0.1", port}, {500ms});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::ConnectFailed);
  }
}

TEST(Client, TimesOutOnSilentServer) {
  // A listener that never accepts: the kernel completes the handshake but
  // nothing ever answers.
  Socket silent(::socket(AF_INET, SOCK_STREAM, 0));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  ASSERT_EQ(::bind(silent.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof addr), 0);
  ASSERT_EQ(::listen(silent.fd(), 4), 0);
  socklen_t len = sizeof addr;
  ::getsockname(silent.fd(), reinterpret_cast<sockaddr*>(&addr), &len);

  InferenceClient client({"127.0.0.1", ntohs(addr.sin_port)}, {200ms});
  const auto started = std::chrono::steady_clock::now();
  try {
    client.infer(Tensorf({4}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::Timeout);
  }
  EXPECT_LT(std::chrono::steady_clock::now() - started, 5s);
}

TEST(Concurrency, HundredClientsMatchSequentialOracle) {
  Fixture f(make_blobs_mlp(8, 4, 4, 8));
  constexpr int kClients = 100;
  Rng rng(6);
  std::vector<Tensorf> inputs;
  std::vector<Tensorf> expected;
  for (int i = 0; i < kClients; ++i) {
    inputs.push_back(random_tensor<float>({32}, rng, 0, 2));
    expected.push_back(forward_later(f.later, inputs.back()));
  }
  std::vector<std::future<Tensorf>> results;
  for (int i = 0; i < kClients; ++i) {
    results.push_back(std::async(std::launch::async, [&, i] {
      InferenceClient client(f.endpoint());
      return client.infer(inputs[i]);
    }));
  }
  for (int i = 0; i < kClients; ++i) EXPECT_TRUE(results[i].get().identical(expected[i])) << i;
  EXPECT_GE(f.server->sessions_served(), static_cast<std::size_t>(kClients));
}

// Everything the client writes is exactly the INFER_REQUEST frames for Z;
// neither the raw input nor the salt appears on the wire.
TEST(Privacy, CapturedTrafficCarriesOnlyZ) {
  Fixture f(make_patterns_cnn(1, 4, 4, 9));
  testing::CaptureRelay relay(f.endpoint());
  Bytes expected_up;
  std::vector<Tensorf> xs;
  std::vector<std::size_t> salts;
  {
    InferenceClient client(relay.endpoint());
    Rng rng(7);
    for (int i = 0; i < 20; ++i) {
      xs.push_back(random_tensor<float>({1, 16, 16}, rng, -1, 1));
      salts.push_back(rng.below(4));
      const Tensorf z = forward_early(f.early, xs.back(), salts.back());
      const Bytes frame = wire::encode_message(wire::make_request(z));
      expected_up.insert(expected_up.end(), frame.begin(), frame.end());
      client_infer(f.early, xs.back(), salts.back(), client);
    }
  }
  const Bytes up = relay.client_to_server(), down = relay.server_to_client();
  EXPECT_EQ(up, expected_up);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const Bytes xb = testing::f32_bytes(xs[i].values());
    for (std::size_t off = 0; off + 8 <= xb.size(); off += 4) {
      const std::span<const std::uint8_t> window(xb.data() + off, 8);
      ASSERT_FALSE(testing::contains(up, window)) << "input bytes leaked";
      ASSERT_FALSE(testing::contains(down, window));
    }
    std::vector<float> onehot(4, 0.0f);
    onehot[salts[i]] = 1.0f;
    EXPECT_FALSE(testing::contains(up, testing::f32_bytes(onehot)));
  }
}

TEST(Server, StopIsIdempotentAndRefusesNewClients) {
  Fixture f(make_blobs_mlp(8, 4, 4, 10));
  const Endpoint ep = f.endpoint();
  f.server->stop();
  f.server->stop();
  EXPECT_FALSE(f.server->running());
  EXPECT_THROW(InferenceClient(ep, {300ms}), Error);
}

}  // namespace
}  // namespace salted
